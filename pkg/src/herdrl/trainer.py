"""Deep V-learning with experience replay and a hard-synced target network."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model
from .core import Ablation, JointObservation, RngStream, ScenarioConfig, sample_circle_crossing, to_robot_frame
from .policy import action_space, select_action
from .sim.env import EnvState, env_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    obs: JointObservation
    reward: float
    next_obs: JointObservation
    done: bool


class ReplayBuffer:
    """Bounded FIFO; the oldest transition is evicted first."""

    def __init__(self, capacity: int = 100_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, item) -> None:
        self._items.append(item)

    def sample(self, rng: RngStream, n: int) -> list:
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 10_000
    batch_size: int = 100
    gamma: float = 0.9
    lr: float = 1e-3
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    epsilon_decay_episodes: int = 4000
    target_sync_every: int = 50
    updates_per_step: int = 1
    warmup: int = 2000
    capacity: int = 100_000
    checkpoint_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        for name in ("batch_size", "lr", "epsilon_decay_episodes", "target_sync_every", "capacity",
                     "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.updates_per_step < 0 or self.warmup < 0:
            raise ValueError("updates_per_step and warmup must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def epsilon_schedule(episode: int, cfg: TrainConfig) -> float:
    if episode < 0:
        raise ValueError("episode must be non-negative")
    frac = min(episode / cfg.epsilon_decay_episodes, 1.0)
    return max(cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start), cfg.epsilon_end)


class TargetCache:
    """Memo of ``V_target(s')`` per transition.

    The target network only changes on a sync, so values stay exact until
    :meth:`clear` is called. Entries hold a reference to their transition,
    which keeps ``id`` keys unique.
    """

    def __init__(self):
        self._values: dict[int, tuple] = {}

    def __len__(self):
        return len(self._values)

    def clear(self) -> None:
        self._values.clear()

    def lookup(self, batch, target_params, ablation: Ablation) -> np.ndarray:
        missing = {id(t): t for t in batch if id(t) not in self._values}
        if missing:
            todo = list(missing.values())
            for t, v in zip(todo, model.values([t.next_obs for t in todo], target_params, ablation)):
                self._values[id(t)] = (t, float(v))
        return np.array([self._values[id(t)][1] for t in batch])


def bellman_target(batch, target_params, gamma: float, ablation: Ablation,
                   cache: TargetCache | None = None) -> np.ndarray:
    """``r`` for terminal transitions, ``r + gamma * V_target(s')`` otherwise."""
    if not batch:
        raise ValueError("empty batch")
    rewards = np.array([t.reward for t in batch])
    live = [i for i, t in enumerate(batch) if not t.done]
    targets = rewards.copy()
    if live and gamma != 0:
        nxt = [batch[i] for i in live]
        if cache is not None:
            v_next = cache.lookup(nxt, target_params, ablation)
        else:
            v_next = model.values([t.next_obs for t in nxt], target_params, ablation)
        targets[live] += gamma * v_next
    return targets


class TrainingDiverged(RuntimeError):
    pass


def loss_and_grads(params: dict, batch, targets: np.ndarray, ablation: Ablation):
    """MSE between V(obs) and ``targets``; returns (loss, name -> gradient)."""
    tape = ad.Tape()
    watched = {name: tape.watch(p) for name, p in params.items()}
    pred = model.forward(model.prepare_batch([t.obs for t in batch], ablation), watched)
    loss = ad.mean_all(ad.square(ad.sub(pred, np.asarray(targets, dtype=float).reshape(-1, 1))))
    grads = ad.backward(tape, loss)
    by_name = {name: grads.get(t.id, np.zeros_like(t.value)) for name, t in watched.items()}
    return float(loss.value[0, 0]), by_name


def train_step(params, target_params, buffer: ReplayBuffer, adam: ad.AdamState, cfg: TrainConfig,
               rng: RngStream, ablation: Ablation, dump_dir=None, cache: TargetCache | None = None):
    """One Adam update on a uniform minibatch.

    Returns ``(params, adam, loss)``; ``loss`` is ``None`` and nothing changes
    when the buffer holds fewer than ``batch_size`` transitions.
    """
    if len(buffer) < cfg.batch_size:
        return params, adam, None
    batch = buffer.sample(rng, cfg.batch_size)
    targets = bellman_target(batch, target_params, cfg.gamma, ablation, cache)
    loss, grads = loss_and_grads(params, batch, targets, ablation)
    if not math.isfinite(loss):
        where = _dump_batch(batch, targets, dump_dir)
        raise TrainingDiverged(f"non-finite loss {loss}; batch dumped to {where}")
    params, adam = ad.adam_step(params, grads, adam)
    return params, adam, loss


def _dump_batch(batch, targets, dump_dir) -> str:
    payload = [
        {"cr": t.obs.cr.tolist(), "humans": t.obs.humans.tolist(), "others": t.obs.other_robots.tolist(),
         "reward": t.reward, "done": t.done, "target": float(y)}
        for t, y in zip(batch, targets)
    ]
    path = Path(dump_dir or ".") / "diverged_batch.json"
    path.write_text(json.dumps(payload, allow_nan=True), encoding="utf-8")
    return str(path)


@dataclass
class TrainingResult:
    params: dict
    log: list
    checkpoints: list


def run_training(cfg: TrainConfig, scenario: ScenarioConfig, out_dir=None, progress=None) -> TrainingResult:
    """Full training loop. Writes ``train_log.jsonl`` and ``ckpt_{episode}.bin``
    into ``out_dir`` when given."""
    ablation = scenario.ablation
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps({"scenario": scenario.to_dict(), "train": cfg.to_dict()}, indent=2), encoding="utf-8")
        log_fh = open(out / "train_log.jsonl", "w", encoding="utf-8")
    else:
        log_fh = None

    params = model.init_params(RngStream(cfg.seed, "init"), ablation)
    target = {k: v.copy() for k, v in params.items()}
    adam = ad.AdamState(lr=cfg.lr)
    buffer = ReplayBuffer(cfg.capacity)
    cache = TargetCache()
    explore = RngStream(cfg.seed, "explore")
    replay = RngStream(cfg.seed, "replay")
    space = action_space(scenario.v_pref)
    records, checkpoints = [], []

    def checkpoint(episode):
        if out is not None:
            path = out / f"ckpt_{episode}.bin"
            model.save_checkpoint(path, params, ablation)
            checkpoints.append(str(path))

    try:
        for ep in range(cfg.episodes):
            eps = epsilon_schedule(ep, cfg)
            states = sample_circle_crossing(scenario, RngStream(scenario.seed, "train", ep))
            env = EnvState.start(states, scenario)
            obs = to_robot_frame(env.states)
            ret, losses, done = 0.0, [], False
            while not done:
                action, _ = select_action(env.states, params, space, eps, explore,
                                          config=scenario, gamma=cfg.gamma)
                res = env_step(env, action)
                next_obs = to_robot_frame(res.env.states)
                buffer.push(Transition(obs, res.reward, next_obs, res.done))
                ret += res.reward
                env, obs, done = res.env, next_obs, res.done
                if len(buffer) >= max(cfg.warmup, cfg.batch_size):
                    for _ in range(cfg.updates_per_step):
                        params, adam, loss = train_step(params, target, buffer, adam, cfg, replay, ablation, out, cache)
                        losses.append(loss)
            if (ep + 1) % cfg.target_sync_every == 0:
                target = {k: v.copy() for k, v in params.items()}
                cache.clear()
            rec = {
                "episode": ep,
                "return": ret,
                "outcome": res.event.kind.value,
                "epsilon": eps,
                "mean_loss": float(np.mean(losses)) if losses else None,
                "steps": env.steps,
            }
            records.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(rec)
            if (ep + 1) % cfg.checkpoint_every == 0 and ep + 1 != cfg.episodes:
                checkpoint(ep + 1)
        checkpoint(cfg.episodes)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainingResult(params, records, checkpoints)
