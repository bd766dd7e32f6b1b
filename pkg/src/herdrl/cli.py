"""Command-line entry point: ``herdrl {train,eval,rollout,selfcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks, model
from .core import Ablation, RngStream, ScenarioConfig, sample_circle_crossing
from .evaluation import evaluate, run_episode
from .sim.env import write_trajectory
from .trainer import TrainConfig, run_training

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("herdrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to our usage code instead.
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="herdrl", description="Crowd navigation with a heterogeneous relational value network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a policy from a JSON config")
    t.add_argument("--config", required=True, help='JSON with "scenario" and "train" sections')
    t.add_argument("--out", required=True, help="output directory for logs and checkpoints")

    e = sub.add_parser("eval", help="evaluate a checkpoint on seeded episodes")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scenario", required=True, help="scenario JSON")
    e.add_argument("--episodes", type=int, default=500)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", required=True, help="metrics JSON output path")

    r = sub.add_parser("rollout", help="export one greedy episode as JSON lines")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--traj", required=True, help="trajectory JSONL output path")

    s = sub.add_parser("selfcheck", help="gradient, reduction, permutation and ORCA invariant suites")
    s.add_argument("--quick", action="store_true", help="smaller suites")
    return p


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RuntimeError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise RuntimeError(f"{path}: invalid JSON ({exc})") from None


def _load_ckpt(path):
    if not Path(path).is_file():
        raise RuntimeError(f"checkpoint not found: {path}")
    return model.load_checkpoint(path)


def _checked_scenario(path, ablation: Ablation, params) -> ScenarioConfig:
    data = _read_json(path)
    data.setdefault("ablation", ablation.value)
    scenario = ScenarioConfig.from_dict(data)
    if scenario.ablation != ablation:
        raise RuntimeError(f"checkpoint ablation {ablation.value} does not match scenario ablation "
                           f"{scenario.ablation.value}")
    diff = model.dimension_diff(params, ablation)
    if diff:
        raise RuntimeError("checkpoint does not match architecture: " + "; ".join(diff))
    return scenario


def _train(args) -> int:
    cfg = _read_json(args.config)
    unknown = set(cfg) - {"scenario", "train"}
    if unknown:
        raise RuntimeError(f"{args.config}: unknown sections {sorted(unknown)}")
    scenario = ScenarioConfig.from_dict(cfg.get("scenario", {}))
    train = TrainConfig.from_dict(cfg.get("train", {}))

    def progress(rec):
        if (rec["episode"] + 1) % 100 == 0:
            log.info("episode %d: %s return %.3f eps %.3f", rec["episode"] + 1, rec["outcome"], rec["return"],
                     rec["epsilon"])

    result = run_training(train, scenario, args.out, progress)
    print(f"trained {train.episodes} episodes; checkpoints: {', '.join(result.checkpoints)}")
    return EXIT_OK


def _eval(args) -> int:
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    params, ablation = _load_ckpt(args.ckpt)
    scenario = _checked_scenario(args.scenario, ablation, params)
    metrics, _ = evaluate(params, ablation, scenario, n_episodes=args.episodes, seed=args.seed)
    Path(args.report).write_text(metrics.to_json() + "\n", encoding="utf-8")
    print(metrics.to_json())
    return EXIT_OK


def _rollout(args) -> int:
    params, ablation = _load_ckpt(args.ckpt)
    scenario = _checked_scenario(args.scenario, ablation, params)
    states = sample_circle_crossing(scenario, RngStream(args.seed, "eval", 0))
    rec = run_episode(params, ablation, scenario, states, 0.0, RngStream(args.seed, "explore", 0),
                      keep_trajectory=True)
    write_trajectory(rec.trajectory, args.traj)
    print(f"{rec.outcome} after {rec.steps} steps ({rec.duration:.2f} s); wrote {args.traj}")
    return EXIT_OK


def _selfcheck(args) -> int:
    results = checks.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} checks passed")
    return EXIT_OK if passed == len(results) else EXIT_RUNTIME


_COMMANDS = {"train": _train, "eval": _eval, "rollout": _rollout, "selfcheck": _selfcheck}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError, OSError, model.CheckpointError) as exc:
        print(f"herdrl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
