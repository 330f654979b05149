"""Command-line entry points: gen-data, train, eval, ablate, gradcheck, bench.

Exit codes: 0 success, 2 configuration or input error (including unknown
flags), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ABLATIONS, TrainConfig, load_config
from .core.params import load_checkpoint
from .data import PRESETS, SyntheticSpec, build_dataset, generate, load_dataset, preset
from .errors import ConfigError, DiffMsinError, IngestionError, NumericError, SingularityError
from .experiments import (ablation_study, ablation_verdict, bench_config, depth_sweep,
                          depth_verdict, fit_to_data, thread_limit)
from .gradcheck import gradcheck
from .model import DiffMSIN
from .training import evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("diffmsin")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [train] and [data] tables")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("--preset", choices=sorted(PRESETS), help="synthetic dataset preset")
    common.add_argument("--out", help="output directory")
    common.add_argument("--ablation", choices=ABLATIONS, help="modules to remove")
    common.add_argument("--data", help="dataset directory (manifest.json) written by gen-data")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="diffmsin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train one model, write metrics and checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True, help="checkpoint.bin written by train")
    ab = sub.add_parser("ablate", parents=[common], help="seed-averaged four-row ablation table")
    ab.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every parameter group")
    gc.add_argument("--tol", type=float, default=1e-4)
    be = sub.add_parser("bench", parents=[common], help="ablation and diffusion-depth experiments with verdicts")
    be.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    be.add_argument("--only", choices=("ablation", "depth"), help="run one of the two experiments")
    return p


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}") from exc


def _resolve(args) -> tuple[TrainConfig, SyntheticSpec]:
    """Merge config file, preset and flags; flags win."""
    cfg, data = (load_config(args.config) if args.config else (None, {}))
    data = dict(data)
    name = args.preset or data.pop("preset", None) or "synergy-small"
    data.pop("preset", None)
    seed = args.seed if args.seed is not None else data.pop("seed", cfg.seed if cfg else 0)
    data.pop("seed", None)
    try:
        spec = preset(name, seed=seed, **data)
    except TypeError as exc:
        raise ConfigError(f"bad [data] table: {exc}") from exc
    if cfg is None:
        cfg = bench_config(name)
    cfg = cfg.replace(seed=seed)
    if args.ablation:
        cfg = cfg.with_ablation(args.ablation)
    return cfg, spec


def _dataset(args, spec):
    if args.data:
        return load_dataset(args.data)
    return build_dataset(spec)[0]


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    _, spec = _resolve(args)
    m = generate(spec, _out(args, f"data/{args.preset or 'synergy-small'}-{spec.seed}"))
    print(f"wrote {m.root / 'manifest.json'} ({', '.join(m.files.values())})")
    print(f"checksum {m.checksum}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, spec = _resolve(args)
    ds = _dataset(args, spec)
    cfg = fit_to_data(cfg, ds)
    out = _out(args, "runs/latest")
    with thread_limit():
        res = train(cfg, ds, metrics_path=out / "metrics.jsonl")
    res.save_checkpoint(out / "checkpoint.bin")
    (out / "run.json").write_text(json.dumps({
        "config": cfg.to_dict(), "n_items": ds.n_items, "profile_cards": list(ds.profile_cards),
        "best_auc": res.best_auc, "best_epoch": res.best_epoch}, indent=2) + "\n")
    print(f"{cfg.ablation}: best AUC {res.best_auc:.4f} at epoch {res.best_epoch}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    run_file = ckpt.parent / "run.json"
    if not run_file.exists():
        raise IngestionError(f"{run_file} not found next to the checkpoint")
    run = json.loads(run_file.read_text())
    cfg = TrainConfig.from_dict(run["config"])
    _, spec = _resolve(args)
    spec = SyntheticSpec(**{**spec.to_dict(), "seed": args.seed if args.seed is not None else cfg.seed})
    ds = _dataset(args, spec)
    model = DiffMSIN(cfg, run["n_items"], run["profile_cards"])
    model.params.restore(dict(load_checkpoint(ckpt)))
    with thread_limit():
        auc = evaluate(model, ds, "test")
    print(f"test AUC {auc:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, spec = _resolve(args)
    with thread_limit():
        res = ablation_study(spec, cfg, seeds=_seeds(args.seeds))
    print(res.table(reference="full"))
    print(f"{res.seconds:.0f}s")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck(tol=args.tol, seed=args.seed or 0)
    print("\n".join(report.lines()))
    return EXIT_OK if report.ok else EXIT_NUMERIC


def cmd_bench(args) -> int:
    cfg, spec = _resolve(args)
    seeds = _seeds(args.seeds)
    verdicts = []
    # the time budgets assume one core unless DMSN_THREADS says otherwise
    with thread_limit(None if "DMSN_THREADS" in os.environ else 1):
        if args.only in (None, "ablation"):
            res = ablation_study(spec, cfg, seeds=seeds)
            print(res.table(reference="full"))
            verdicts.append(ablation_verdict(res))
        if args.only in (None, "depth"):
            res = depth_sweep(spec, cfg, seeds=seeds)
            print(res.table(reference="T=12"))
            verdicts.append(depth_verdict(res))
    for v in verdicts:
        print(v.line())
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericError, SingularityError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiffMsinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
