"""Time-stepped circle-crossing environment.

Humans and other robots are driven by ORCA. Humans never see the center
robot; other robots see every agent. All agents hold their commanded
velocity for one step of ``dt`` seconds.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ..core import AgentKind, AgentState, ScenarioConfig, split_agents, wrap_angle
from .orca import OrcaParams, orca_velocity

SUCCESS_REWARD = 1.0
COLLISION_PENALTY = -0.25
DISCOMFORT_SLOPE = 0.1
PROGRESS_WEIGHT = 0.2

SPEED_TOLERANCE = 1e-9


class EventKind(enum.Enum):
    NONE = "None"
    REACHED_GOAL = "ReachedGoal"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"

    @property
    def terminal(self) -> bool:
        return self is not EventKind.NONE


@dataclass(frozen=True)
class StepEvent:
    kind: EventKind
    min_separation: float  # inf when the robot has no neighbors


@dataclass(frozen=True)
class Action:
    speed: float
    heading: float

    def velocity(self) -> tuple[float, float]:
        return self.speed * math.cos(self.heading), self.speed * math.sin(self.heading)


def integrate(agent: AgentState, commanded_velocity, dt: float) -> AgentState:
    """Hold ``commanded_velocity`` for ``dt``. Over-speed commands are clamped to v_pref."""
    vx, vy = float(commanded_velocity[0]), float(commanded_velocity[1])
    speed = math.hypot(vx, vy)
    if speed > agent.v_pref + SPEED_TOLERANCE:
        vx, vy = vx / speed * agent.v_pref, vy / speed * agent.v_pref
        speed = agent.v_pref
    heading = float(wrap_angle(math.atan2(vy, vx))) if speed > 0 else agent.heading
    return replace(agent, px=agent.px + vx * dt, py=agent.py + vy * dt, vx=vx, vy=vy, heading=heading)


def closest_surface_distance(rel_p, rel_v, radius_sum, dt):
    """Minimum of ``|rel_p + rel_v * s| - radius_sum`` over ``s`` in [0, dt].

    Arrays broadcast; ``rel_p``/``rel_v`` have a trailing axis of size 2.
    """
    rel_p = np.asarray(rel_p, dtype=float)
    rel_v = np.asarray(rel_v, dtype=float)
    vv = np.sum(rel_v * rel_v, axis=-1)
    pv = np.sum(rel_p * rel_v, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(vv > 0, -pv / vv, 0.0)
    s = np.clip(s, 0.0, dt)[..., None]
    closest = rel_p + rel_v * s
    return np.hypot(closest[..., 0], closest[..., 1]) - radius_sum


def _robot_separation(robot: AgentState, neighbors, prev_robot=None, prev_neighbors=None, dt=0.0):
    if not neighbors:
        return math.inf
    if prev_robot is None:
        rel_p = [(n.px - robot.px, n.py - robot.py) for n in neighbors]
        rel_v = np.zeros((len(neighbors), 2))
        span = 0.0
    else:
        rel_p = [(n.px - prev_robot.px, n.py - prev_robot.py) for n in prev_neighbors]
        rel_v = [((n.px - pn.px) - (robot.px - prev_robot.px), (n.py - pn.py) - (robot.py - prev_robot.py))
                 for n, pn in zip(neighbors, prev_neighbors)]
        # Displacements are used as velocity over a unit interval.
        span = 1.0
    rsum = np.array([n.radius + robot.radius for n in neighbors])
    return float(np.min(closest_surface_distance(rel_p, rel_v, rsum, span)))


def detect_events(states, t: float, config: ScenarioConfig, prev_states=None) -> StepEvent:
    """Classify the step ending at time ``t``.

    With ``prev_states`` the separation is the closest approach along the
    straight-line motion of the step; otherwise it is measured at ``states``.
    Precedence: Collision > ReachedGoal > Timeout.
    """
    robot, humans, others = split_agents(states)
    neighbors = humans + others
    if prev_states is not None:
        prev_robot, ph, po = split_agents(prev_states)
        min_sep = _robot_separation(robot, neighbors, prev_robot, ph + po)
    else:
        min_sep = _robot_separation(robot, neighbors)
    if min_sep < 0:
        kind = EventKind.COLLISION
    elif robot.goal_distance < config.agent_radius:
        kind = EventKind.REACHED_GOAL
    elif t >= config.time_limit - 1e-9:
        kind = EventKind.TIMEOUT
    else:
        kind = EventKind.NONE
    return StepEvent(kind, min_sep)


def reward(prev_d_g: float, d_g: float, event: StepEvent, min_sep: float, config: ScenarioConfig) -> float:
    if event.kind is EventKind.REACHED_GOAL:
        return SUCCESS_REWARD
    if event.kind is EventKind.COLLISION:
        return COLLISION_PENALTY
    r = PROGRESS_WEIGHT * (prev_d_g - d_g)
    if 0 <= min_sep < config.discomfort_dist:
        r -= DISCOMFORT_SLOPE * (config.discomfort_dist - min_sep)
    return r


def reward_array(prev_d_g, d_g, min_sep, reached, config: ScenarioConfig) -> np.ndarray:
    """Vectorized :func:`reward` for predicted transitions (no timeout)."""
    prev_d_g, d_g, min_sep = np.broadcast_arrays(prev_d_g, d_g, min_sep)
    r = PROGRESS_WEIGHT * (prev_d_g - d_g)
    discomfort = (min_sep >= 0) & (min_sep < config.discomfort_dist)
    r = np.where(discomfort, r - DISCOMFORT_SLOPE * (config.discomfort_dist - min_sep), r)
    r = np.where(reached, SUCCESS_REWARD, r)
    return np.where(min_sep < 0, COLLISION_PENALTY, r)


@dataclass(frozen=True)
class EnvState:
    states: tuple
    t: float
    config: ScenarioConfig
    orca: OrcaParams = OrcaParams()
    steps: int = 0
    done: bool = False

    @classmethod
    def start(cls, states, config: ScenarioConfig, orca: OrcaParams | None = None) -> "EnvState":
        split_agents(states)
        return cls(tuple(states), 0.0, config, orca or OrcaParams())

    @property
    def robot(self) -> AgentState:
        return next(s for s in self.states if s.kind == AgentKind.CENTER_ROBOT)


class StepResult(NamedTuple):
    env: EnvState
    reward: float
    event: StepEvent
    done: bool
    clamped: bool


class EpisodeDone(RuntimeError):
    pass


def _canonical(neighbors):
    # Sorting makes the ORCA solve independent of list order.
    return sorted(neighbors, key=lambda a: (a.px, a.py, a.vx, a.vy, a.radius))


def peer_velocities(states, dt: float, orca: OrcaParams) -> list:
    """ORCA velocities for every peer, ``None`` for the center robot."""
    out = []
    for i, agent in enumerate(states):
        if agent.kind == AgentKind.CENTER_ROBOT:
            out.append(None)
            continue
        if agent.kind == AgentKind.HUMAN:
            visible = [s for j, s in enumerate(states) if j != i and s.kind != AgentKind.CENTER_ROBOT]
        else:
            visible = [s for j, s in enumerate(states) if j != i]
        out.append(orca_velocity(agent, _canonical(visible), orca, dt))
    return out


def env_step(env: EnvState, action: Action) -> StepResult:
    if env.done:
        raise EpisodeDone("cannot step a finished episode")
    cfg = env.config
    velocities = peer_velocities(env.states, cfg.dt, env.orca)
    robot_v = action.velocity()
    clamped = False
    new_states = []
    for agent, v in zip(env.states, velocities):
        if v is None:
            v = robot_v
            clamped = math.hypot(*v) > agent.v_pref + SPEED_TOLERANCE
        new_states.append(integrate(agent, v, cfg.dt))
    t = (env.steps + 1) * cfg.dt
    event = detect_events(new_states, t, cfg, prev_states=env.states)
    prev_robot = env.robot
    robot = next(s for s in new_states if s.kind == AgentKind.CENTER_ROBOT)
    r = reward(prev_robot.goal_distance, robot.goal_distance, event, event.min_separation, cfg)
    done = event.kind.terminal
    nxt = EnvState(tuple(new_states), t, cfg, env.orca, env.steps + 1, done)
    return StepResult(nxt, r, event, done, clamped)


def step_record(result: StepResult, action: Action | None) -> dict:
    """One JSON-serializable trajectory line."""
    sep = result.event.min_separation
    return {
        "t": result.env.t,
        "agents": [
            {"p": [a.px, a.py], "v": [a.vx, a.vy], "r": a.radius, "kind": a.kind.name}
            for a in result.env.states
        ],
        "action": None if action is None else {"speed": action.speed, "heading": action.heading},
        "reward": result.reward,
        "event": result.event.kind.value,
        "min_separation": sep if math.isfinite(sep) else None,
        "clamped": result.clamped,
    }


def write_trajectory(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _pairwise_min_separation(prev, new) -> float:
    p0 = np.array([(a.px, a.py) for a in prev])
    d = np.array([(b.px - a.px, b.py - a.py) for a, b in zip(prev, new)])
    r = np.array([a.radius for a in prev])
    i, j = np.triu_indices(len(prev), k=1)
    if len(i) == 0:
        return math.inf
    return float(np.min(closest_surface_distance(p0[j] - p0[i], d[j] - d[i], r[i] + r[j], 1.0)))


def run_orca_episode(states, config: ScenarioConfig, orca: OrcaParams | None = None):
    """Roll out a scene where every agent, the center robot included, runs ORCA
    with full mutual visibility.

    Returns ``(min pairwise surface separation, steps, trajectory)``, where the
    trajectory lists the states after every step.
    """
    orca = orca or OrcaParams()
    current = list(states)
    min_sep = math.inf
    trajectory = [tuple(current)]
    steps = 0
    for steps in range(1, config.max_steps + 1):
        vels = [orca_velocity(a, _canonical(current[:i] + current[i + 1:]), orca, config.dt)
                for i, a in enumerate(current)]
        nxt = [integrate(a, v, config.dt) for a, v in zip(current, vels)]
        min_sep = min(min_sep, _pairwise_min_separation(current, nxt))
        current = nxt
        trajectory.append(tuple(current))
        if all(a.goal_distance < a.radius for a in current):
            break
    return min_sep, steps, trajectory
