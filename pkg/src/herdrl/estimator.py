"""scikit-learn style wrapper around training, action selection and evaluation.

``fit`` takes a scenario instead of a feature matrix, since the learner
generates its own data by interacting with the simulator. ``predict`` maps
scenes (lists of :class:`AgentState`) to greedy action indices.
"""

from __future__ import annotations

import math
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import model
from .core import Ablation, AgentKind, AgentState, ScenarioConfig, parse_counts, to_robot_frame
from .evaluation import evaluate
from .policy import action_scores, action_space
from .trainer import TrainConfig, run_training


def check_scenario(scenario, **overrides) -> ScenarioConfig:
    """Coerce a ScenarioConfig, a dict of its fields, or a crowd tag like ``"5H2O"``."""
    if scenario is None:
        scenario = ScenarioConfig()
    elif isinstance(scenario, str):
        n_h, n_o = parse_counts(scenario)
        scenario = ScenarioConfig(n_humans=n_h, n_other_robots=n_o)
    elif isinstance(scenario, dict):
        scenario = ScenarioConfig.from_dict(scenario)
    elif not isinstance(scenario, ScenarioConfig):
        raise TypeError(f"expected ScenarioConfig, dict or crowd tag, got {type(scenario).__name__}")
    if overrides:
        scenario = ScenarioConfig.from_dict({**scenario.to_dict(), **overrides})
    return scenario


def check_states(states) -> list[AgentState]:
    """Validate one scene: exactly one center robot, finite kinematics."""
    states = list(states)
    if not all(isinstance(s, AgentState) for s in states):
        raise TypeError("a scene is a sequence of AgentState")
    n_center = sum(s.kind == AgentKind.CENTER_ROBOT for s in states)
    if n_center != 1:
        raise ValueError(f"a scene needs exactly one center robot, found {n_center}")
    for s in states:
        if not all(math.isfinite(x) for x in (s.px, s.py, s.vx, s.vy, s.gx, s.gy, s.heading)):
            raise ValueError(f"non-finite agent state: {s}")
    return states


def check_scenes(X) -> list[list[AgentState]]:
    """Accept a single scene or a sequence of scenes."""
    X = list(X)
    if X and isinstance(X[0], AgentState):
        X = [X]
    if not X:
        raise ValueError("no scenes given")
    return [check_states(s) for s in X]


_TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))


class CrowdNavAgent(BaseEstimator):
    """Value-based crowd navigation policy.

    Hyperparameters mirror :class:`TrainConfig`, plus ``ablation``.
    Fitted attributes: ``params_``, ``ablation_``, ``scenario_``, ``log_``.
    """

    def __init__(self, ablation="HeR", episodes=1000, batch_size=100, gamma=0.9, lr=1e-3, epsilon_start=0.5,
                 epsilon_end=0.1, epsilon_decay_episodes=4000, target_sync_every=50, updates_per_step=1,
                 warmup=2000, capacity=100_000, checkpoint_every=1000, seed=0):
        self.ablation = ablation
        self.episodes = episodes
        self.batch_size = batch_size
        self.gamma = gamma
        self.lr = lr
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_episodes = epsilon_decay_episodes
        self.target_sync_every = target_sync_every
        self.updates_per_step = updates_per_step
        self.warmup = warmup
        self.capacity = capacity
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in _TRAIN_FIELDS})

    def fit(self, X=None, y=None, out_dir=None):
        """Train on the scenario ``X`` (ScenarioConfig, dict or crowd tag). ``y`` is ignored."""
        scenario = check_scenario(X, ablation=Ablation(self.ablation).value)
        result = run_training(self._train_config(), scenario, out_dir)
        self.params_ = result.params
        self.ablation_ = scenario.ablation
        self.scenario_ = scenario
        self.log_ = result.log
        return self

    @classmethod
    def from_checkpoint(cls, path, scenario=None) -> "CrowdNavAgent":
        params, ablation = model.load_checkpoint(path)
        est = cls(ablation=ablation.value)
        est.params_ = params
        est.ablation_ = ablation
        est.scenario_ = check_scenario(scenario, ablation=ablation.value)
        est.log_ = []
        return est

    def decision_function(self, X) -> np.ndarray:
        """(n_scenes, 80) lookahead scores."""
        check_is_fitted(self, "params_")
        space = action_space(self.scenario_.v_pref)
        return np.stack([action_scores(s, self.params_, space, self.scenario_, self.ablation_, self.gamma)
                         for s in check_scenes(X)])

    def predict(self, X) -> np.ndarray:
        """Greedy action index per scene; ties go to the lowest index."""
        return np.argmax(self.decision_function(X), axis=1)

    def score(self, X=None, y=None, n_episodes: int = 100, seed: int = 0) -> float:
        """Greedy success rate on ``n_episodes`` held-out scenes of scenario ``X``."""
        check_is_fitted(self, "params_")
        scenario = self.scenario_ if X is None else check_scenario(X, ablation=self.ablation_.value)
        metrics, _ = evaluate(self.params_, self.ablation_, scenario, n_episodes=n_episodes, seed=seed,
                              gamma=self.gamma)
        return metrics.SR

    def value(self, states) -> float:
        """State value of one scene."""
        check_is_fitted(self, "params_")
        return model.value(to_robot_frame(check_states(states)), self.params_, self.ablation_)
