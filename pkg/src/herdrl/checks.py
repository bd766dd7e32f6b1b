"""Invariant suites shared by ``herdrl selfcheck`` and the acceptance tests.

Each suite returns a :class:`CheckResult`; none of them raise on failure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model
from .core import Ablation, JointObservation, RngStream, ScenarioConfig, sample_circle_crossing, to_robot_frame
from .sim.env import run_orca_episode


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def random_params(rng: RngStream, ablation: Ablation = Ablation.HeR, bias_scale: float = 0.1) -> dict:
    """Glorot weights plus small random biases, so no bias sits exactly at 0."""
    params = model.init_params(rng, ablation)
    for name, p in params.items():
        if name.endswith(".b"):
            params[name] = rng.uniform(-bias_scale, bias_scale, size=p.shape)
    return params


def random_scene(rng: RngStream, max_agents: int = 8, config: ScenarioConfig | None = None) -> JointObservation:
    """Circle-crossing observation with 1..max_agents agents in total."""
    total = int(rng.integers(1, max_agents + 1))
    n_h = int(rng.integers(0, total))
    cfg = (config or ScenarioConfig()).with_counts(n_h, total - 1 - n_h)
    return to_robot_frame(sample_circle_crossing(cfg, rng))


def value_and_grads(obs: JointObservation, params: dict, ablation: Ablation) -> tuple[float, dict]:
    tape = ad.Tape()
    watched = {k: tape.watch(v) for k, v in params.items()}
    out = model.forward(model.prepare_batch([obs], ablation), watched)
    grads = ad.backward(tape, ad.sum_all(out))
    return float(out.value[0, 0]), {k: grads.get(t.id, np.zeros_like(t.value)) for k, t in watched.items()}


def gradient_check(n_scenes: int = 20, coords_per_scene: int = 13, h: float = 1e-5, rtol: float = 1e-4,
                   seed: int = 0, ablation: Ablation = Ablation.HeR, floor: float = 1e-7) -> CheckResult:
    """Backprop vs central differences on randomly sampled parameter coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor only
    matters for gradients that are zero up to round-off.
    """
    start = time.perf_counter()
    rng = RngStream(seed, "test", "grad")
    names = list(model.param_shapes(ablation))
    worst, checked, failures = 0.0, 0, 0
    for _ in range(n_scenes):
        obs = random_scene(rng)
        params = random_params(rng, ablation)
        _, grads = value_and_grads(obs, params, ablation)
        sizes = np.array([params[n].size for n in names], dtype=float)
        picks = rng.integers(0, int(sizes.sum()), size=coords_per_scene)
        bounds = np.cumsum(sizes)
        for flat in picks:
            k = int(np.searchsorted(bounds, flat, side="right"))
            name = names[k]
            idx = np.unravel_index(int(flat - (bounds[k] - sizes[k])), params[name].shape)
            base = params[name][idx]
            params[name][idx] = base + h
            up = model.value(obs, params, ablation)
            params[name][idx] = base - h
            down = model.value(obs, params, ablation)
            params[name][idx] = base
            numeric = (up - down) / (2 * h)
            analytic = grads[name][idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
            failures += err > rtol
            checked += 1
    return CheckResult("gradient", failures == 0,
                       f"{checked} coordinates over {n_scenes} scenes, worst rel err {worst:.2e}, {failures} over {rtol:g}",
                       time.perf_counter() - start)


def reduction_check(n_scenes: int = 100, tol: float = 1e-9, seed: int = 0) -> CheckResult:
    """Tied relation weights reduce the typed layer to a plain layer on the union graph."""
    start = time.perf_counter()
    rng = RngStream(seed, "test", "reduction")
    relations = model.relation_keys(Ablation.HeR)
    worst = 0.0
    for _ in range(n_scenes):
        graph = model.build_het_graph(random_scene(rng), Ablation.HeR)
        feats = rng.uniform(-1, 1, size=(graph.n_nodes, model.EMBED_DIM))
        W1 = rng.uniform(-0.3, 0.3, size=(model.EMBED_DIM, model.EMBED_DIM))
        W2 = rng.uniform(-0.3, 0.3, size=(model.EMBED_DIM, model.EMBED_DIM))
        het = model.hetgnn_layer(graph, feats, {r: (W1, W2) for r in relations}).value
        hom = model.homogeneous_gnn_layer(graph, feats, W1, W2)
        worst = max(worst, float(np.max(np.abs(het - hom))))
    return CheckResult("reduction", worst <= tol, f"{n_scenes} scenes, max abs diff {worst:.2e} (tol {tol:g})",
                       time.perf_counter() - start)


def permutation_check(n_scenes: int = 10, n_perms: int = 100, tol: float = 1e-9, seed: int = 0,
                      ablation: Ablation = Ablation.HeR) -> CheckResult:
    """value() is unchanged when humans or other robots are listed in another order."""
    start = time.perf_counter()
    rng = RngStream(seed, "test", "perm")
    cfg = ScenarioConfig(ablation=ablation)
    worst = 0.0
    for _ in range(n_scenes):
        obs = to_robot_frame(sample_circle_crossing(cfg, rng))
        params = random_params(rng, ablation)
        base = model.value(obs, params, ablation)
        perms = []
        for _ in range(n_perms):
            hp = np.argsort(rng.uniform(size=len(obs.humans)))
            op = np.argsort(rng.uniform(size=len(obs.other_robots)))
            perms.append(JointObservation(obs.cr, obs.humans[hp], obs.other_robots[op]))
        vals = model.values(perms, params, ablation)
        worst = max(worst, float(np.max(np.abs(vals - base))))
    return CheckResult("permutation", worst <= tol,
                       f"{n_scenes} scenes x {n_perms} permutations, max abs diff {worst:.2e} (tol {tol:g})",
                       time.perf_counter() - start)


def orca_soundness(n_episodes: int = 100, seed: int = 0, config: ScenarioConfig | None = None) -> CheckResult:
    """ORCA-only circle crossing never lets two agents overlap."""
    start = time.perf_counter()
    cfg = config or ScenarioConfig()
    worst = np.inf
    for i in range(n_episodes):
        states = sample_circle_crossing(cfg, RngStream(seed, "test", "orca", i))
        sep, _, _ = run_orca_episode(states, cfg)
        worst = min(worst, sep)
    return CheckResult("orca", bool(worst >= 0.0),
                       f"{n_episodes} episodes ({cfg.n_humans}H{cfg.n_other_robots}O), min separation {worst:.4f} m",
                       time.perf_counter() - start)


def run_all(quick: bool = False) -> list[CheckResult]:
    if quick:
        return [gradient_check(n_scenes=4), reduction_check(n_scenes=20), permutation_check(n_scenes=2, n_perms=20),
                orca_soundness(n_episodes=10)]
    return [gradient_check(), reduction_check(), permutation_check(), orca_soundness()]
