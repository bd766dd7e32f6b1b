"""Discrete action space and one-step lookahead action selection.

An action is scored as the predicted immediate reward plus the discounted
value of the predicted next observation. Peers are predicted to keep their
current velocity, since the learner cannot query their controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model
from .core import (Ablation, AgentKind, JointObservation, RngStream, ScenarioConfig,
                   neighbor_arrays, observe_arrays, split_agents, to_robot_frame)
from .sim.env import Action, closest_surface_distance, integrate, reward_array

N_SPEEDS = 5
N_HEADINGS = 16
DEFAULT_GAMMA = 0.9


@dataclass(frozen=True)
class ActionSpace:
    speeds: np.ndarray  # (5,)
    headings: np.ndarray  # (16,)

    def __len__(self):
        return len(self.speeds) * len(self.headings)

    def __getitem__(self, index: int) -> Action:
        k, j = divmod(int(index), len(self.headings))
        return Action(float(self.speeds[k]), float(self.headings[j]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def velocities(self) -> np.ndarray:
        """(80, 2) world-frame velocities in index order."""
        s = np.repeat(self.speeds, len(self.headings))
        h = np.tile(self.headings, len(self.speeds))
        return np.stack([s * np.cos(h), s * np.sin(h)], axis=1)


def action_space(v_pref: float) -> ActionSpace:
    """5 exponentially spaced speeds in (0, v_pref] x 16 evenly spaced headings."""
    if not v_pref > 0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    k = np.arange(1, N_SPEEDS + 1)
    speeds = (np.exp(k / N_SPEEDS) - 1.0) / (math.e - 1.0) * v_pref
    speeds[-1] = v_pref
    headings = 2.0 * np.pi * np.arange(N_HEADINGS) / N_HEADINGS
    return ActionSpace(speeds, headings)


def lookahead_propagate(states, a: Action, dt: float) -> JointObservation:
    """Observation after moving the robot by ``a`` and every peer at constant velocity."""
    moved = []
    for s in states:
        if s.kind == AgentKind.CENTER_ROBOT:
            moved.append(integrate(s, a.velocity(), dt))
        else:
            moved.append(integrate(s, (s.vx, s.vy), dt))
    return to_robot_frame(moved)


@dataclass(frozen=True)
class Lookahead:
    """Predicted outcomes of every action from one state."""

    cr: np.ndarray  # (A, 6)
    humans: np.ndarray  # (A, n, 8)
    others: np.ndarray  # (A, m, 8)
    rewards: np.ndarray  # (A,)
    min_separation: np.ndarray  # (A,)
    reached: np.ndarray  # (A,)


def lookahead_all(states, space: ActionSpace, config: ScenarioConfig) -> Lookahead:
    robot, humans, others = split_agents(states)
    dt = config.dt
    vel = space.velocities
    A = len(vel)
    rp0 = np.array([robot.px, robot.py])
    rp = rp0 + vel * dt
    heading = np.mod(np.arctan2(vel[:, 1], vel[:, 0]), 2 * np.pi)
    p, v, r, c = neighbor_arrays(humans + others)
    k = len(p)
    np1 = p + v * dt
    cr, nb = observe_arrays(rp, vel, heading, (robot.gx, robot.gy), robot.radius, robot.v_pref,
                            np.broadcast_to(np1, (A, k, 2)), np.broadcast_to(v, (A, k, 2)),
                            np.broadcast_to(r, (A, k)), np.broadcast_to(c, (A, k)))
    if k:
        rel_p = (p - rp0)[None, :, :]
        rel_v = (v[None, :, :] - vel[:, None, :])
        sep = closest_surface_distance(rel_p, rel_v, r + robot.radius, dt).min(axis=1)
    else:
        sep = np.full(A, np.inf)
    d_g = cr[:, 0]
    reached = d_g < config.agent_radius
    rewards = reward_array(robot.goal_distance, d_g, sep, reached, config)
    n = len(humans)
    return Lookahead(cr, nb[:, :n], nb[:, n:], rewards, sep, reached)


def action_scores(states, params, space: ActionSpace, config: ScenarioConfig,
                  ablation: Ablation, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    look = lookahead_all(states, space, config)
    batch = model.prepare_arrays(look.cr, look.humans, look.others, ablation)
    v = model.forward(batch, params).value[:, 0]
    return look.rewards + gamma * v


def select_action(states, params, space: ActionSpace, epsilon: float, rng: RngStream, *,
                  config: ScenarioConfig, ablation: Ablation | None = None,
                  gamma: float = DEFAULT_GAMMA) -> tuple[Action, int]:
    """Epsilon-greedy over lookahead scores; ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    ablation = config.ablation if ablation is None else Ablation(ablation)
    if rng.random() < epsilon:
        index = int(rng.integers(len(space)))
    else:
        index = int(np.argmax(action_scores(states, params, space, config, ablation, gamma)))
    return space[index], index
