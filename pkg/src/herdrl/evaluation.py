"""Episode rollouts and the navigation metrics (SR, CR, AT, DR, MD)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from . import model
from .core import Ablation, RngStream, ScenarioConfig, sample_circle_crossing
from .policy import DEFAULT_GAMMA, action_space, select_action
from .sim.env import EnvState, EventKind, env_step, step_record

OUTCOMES = ("Success", "Collision", "Timeout")
_OUTCOME_OF_EVENT = {
    EventKind.REACHED_GOAL: "Success",
    EventKind.COLLISION: "Collision",
    EventKind.TIMEOUT: "Timeout",
}


@dataclass
class EpisodeRecord:
    outcome: str
    duration: float
    min_separations: list = field(default_factory=list)  # one per step
    trajectory: list | None = None

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    @property
    def steps(self) -> int:
        return len(self.min_separations)


@dataclass(frozen=True)
class Metrics:
    SR: float
    CR: float
    AT: float | None
    DR: float
    MD: float | None
    n_episodes: int

    @property
    def timeout_rate(self) -> float:
        return 1.0 - self.SR - self.CR

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _mean(xs) -> float:
    # fsum is exact, so the result does not depend on record order.
    return math.fsum(xs) / len(xs)


def compute_metrics(records, discomfort_dist: float) -> Metrics:
    """Aggregate a suite of episodes.

    AT averages successful episodes only. DR is the per-episode fraction of
    steps with ``0 <= min_sep < discomfort_dist``, averaged over episodes.
    MD averages, over episodes with at least one such step, the smallest
    separation among those steps. AT/MD are ``None`` when undefined.
    """
    records = list(records)
    if not records:
        raise ValueError("no episodes to aggregate")
    n = len(records)
    successes = [r for r in records if r.outcome == "Success"]
    collisions = sum(r.outcome == "Collision" for r in records)
    rates, risk_minima = [], []
    for r in records:
        risky = [s for s in r.min_separations if s is not None and 0 <= s < discomfort_dist]
        rates.append(len(risky) / r.steps if r.steps else 0.0)
        if risky:
            risk_minima.append(min(risky))
    return Metrics(
        SR=len(successes) / n,
        CR=collisions / n,
        AT=_mean([r.duration for r in successes]) if successes else None,
        DR=_mean(rates),
        MD=_mean(risk_minima) if risk_minima else None,
        n_episodes=n,
    )


def run_episode(params, ablation: Ablation, scenario: ScenarioConfig, states, epsilon: float = 0.0,
                rng: RngStream | None = None, gamma: float = DEFAULT_GAMMA, keep_trajectory: bool = False):
    """Roll one episode with the lookahead policy; returns an :class:`EpisodeRecord`."""
    space = action_space(scenario.v_pref)
    rng = rng or RngStream(0, "explore")
    env = EnvState.start(states, scenario)
    seps, traj = [], [] if keep_trajectory else None
    while True:
        action, _ = select_action(env.states, params, space, epsilon, rng,
                                  config=scenario, ablation=ablation, gamma=gamma)
        res = env_step(env, action)
        seps.append(res.event.min_separation)
        if traj is not None:
            traj.append(step_record(res, action))
        env = res.env
        if res.done:
            return EpisodeRecord(_OUTCOME_OF_EVENT[res.event.kind], env.t, seps, traj)


def evaluate(params, ablation: Ablation, scenario: ScenarioConfig, n_episodes: int = 500, seed: int = 0,
             epsilon: float = 0.0, gamma: float = DEFAULT_GAMMA, keep_trajectories: bool = False):
    """Run a seeded test suite. Returns ``(Metrics, records)``.

    Scenes come from the ``eval`` namespace of ``seed``, disjoint from the
    training scenes.
    """
    ablation = Ablation(ablation)
    diff = model.dimension_diff(params, ablation)
    if diff:
        raise model.CheckpointError("checkpoint does not match architecture: " + "; ".join(diff))
    records = []
    for i in range(n_episodes):
        states = sample_circle_crossing(scenario, RngStream(seed, "eval", i))
        rec = run_episode(params, ablation, scenario, states, epsilon, RngStream(seed, "explore", i),
                          gamma, keep_trajectories)
        records.append(rec)
    return compute_metrics(records, scenario.discomfort_dist), records
