"""Seed-averaged ablation and diffusion-depth sweeps on synthetic data."""
from __future__ import annotations

import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import SyntheticSpec, build_dataset, preset
from .training import train

log = logging.getLogger(__name__)

# row label -> ablation switch, in the order the table is printed
ABLATION_ROWS = {
    "full": "none",
    "no_fdaf": "no_fdaf",
    "no_src": "no_src",
    "no_mfe_src_fdaf": "all",
}


# training overrides for presets too small for the default model
PRESET_TRAIN = {
    "tiny": dict(batch_size=32, d_e=16, hidden=16, att_hidden=8, d_profile=4, heads=4,
                 max_epochs=3, src={"T": 4}),
}


def bench_config(preset_name: str | None = None, **changes) -> TrainConfig:
    """Training settings for the desk-scale synthetic runs: the default model
    dims, T=12, and a short early-stopping horizon."""
    base = dict(batch_size=1024, max_epochs=6, early_stop_patience=2, src={"T": 12})
    base.update(PRESET_TRAIN.get(preset_name, {}))
    base.update(changes)
    return TrainConfig(**base)


def fit_to_data(cfg: TrainConfig, ds) -> TrainConfig:
    """Take the image/text widths from the dataset's embedding table."""
    d_im, d_te = ds.encoder.im.shape[1], ds.encoder.te.shape[1]
    if (cfg.d_im, cfg.d_te) == (d_im, d_te):
        return cfg
    return cfg.replace(d_im=d_im, d_te=d_te)


@contextmanager
def thread_limit(n: int | None = None):
    """Cap BLAS threads (default from DMSN_THREADS, else unchanged)."""
    if n is None:
        env = os.environ.get("DMSN_THREADS")
        n = int(env) if env else None
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(n):
        yield


@dataclass
class SweepResult:
    """AUC per (row, seed) plus wall time."""
    rows: dict[str, list[float]] = field(default_factory=dict)
    seconds: float = 0.0

    def mean(self, row: str) -> float:
        return float(np.mean(self.rows[row]))

    def std(self, row: str) -> float:
        return float(np.std(self.rows[row], ddof=1)) if len(self.rows[row]) > 1 else 0.0

    def table(self, reference: str | None = None) -> str:
        ref = self.mean(reference) if reference else None
        lines = [f"{'config':18s} {'mean AUC':>9s} {'std':>7s}" + (f" {'delta':>8s}" if ref else "")
                 + "  per-seed"]
        for row, vals in self.rows.items():
            line = f"{row:18s} {self.mean(row):9.4f} {self.std(row):7.4f}"
            if ref is not None:
                line += f" {self.mean(row) - ref:+8.4f}"
            lines.append(line + "  " + " ".join(f"{v:.4f}" for v in vals))
        return "\n".join(lines)


def _spec_for(spec: SyntheticSpec | str, seed: int) -> SyntheticSpec:
    if isinstance(spec, str):
        return preset(spec, seed=seed)
    return SyntheticSpec(**{**spec.to_dict(), "seed": seed})


def ablation_study(spec: SyntheticSpec | str = "synergy-small", cfg: TrainConfig | None = None,
                   seeds=(0, 1, 2), rows=tuple(ABLATION_ROWS)) -> SweepResult:
    """Train each ablation row on one dataset per seed (data and init share the seed)."""
    cfg = cfg or bench_config()
    res = SweepResult(rows={r: [] for r in rows})
    t0 = time.perf_counter()
    for seed in seeds:
        ds, _ = build_dataset(_spec_for(spec, seed))
        for row in rows:
            run_cfg = fit_to_data(cfg, ds).replace(seed=seed).with_ablation(ABLATION_ROWS[row])
            auc = train(run_cfg, ds).best_auc
            log.info("seed %d %s auc=%.4f", seed, row, auc)
            res.rows[row].append(auc)
    res.seconds = time.perf_counter() - t0
    return res


def depth_sweep(spec: SyntheticSpec | str = "synergy-small", cfg: TrainConfig | None = None,
                seeds=(0, 1, 2), steps=(2, 12, 40)) -> SweepResult:
    """Full model trained with each diffusion depth T."""
    cfg = cfg or bench_config()
    res = SweepResult(rows={f"T={t}": [] for t in steps})
    t0 = time.perf_counter()
    for seed in seeds:
        ds, _ = build_dataset(_spec_for(spec, seed))
        for t in steps:
            auc = train(fit_to_data(cfg, ds).replace(seed=seed, src_T=t), ds).best_auc
            log.info("seed %d T=%d auc=%.4f", seed, t, auc)
            res.rows[f"T={t}"].append(auc)
    res.seconds = time.perf_counter() - t0
    return res


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def ablation_verdict(res: SweepResult, min_gap: float = 0.02, budget_s: float = 600.0) -> Verdict:
    """full beats no_src by ``min_gap`` on the seed mean, the stripped-down
    row has the lowest mean, and the sweep fit in the time budget."""
    gap = res.mean("full") - res.mean("no_src")
    means = {r: res.mean(r) for r in res.rows}
    lowest = min(means, key=means.get)
    ok = gap >= min_gap and lowest == "no_mfe_src_fdaf" and res.seconds < budget_s
    return Verdict("planted-synergy ablation", ok,
                   f"full-no_src={gap:+.4f} (need >= {min_gap}), lowest={lowest}, {res.seconds:.0f}s "
                   f"(budget {budget_s:.0f}s)")


def depth_verdict(res: SweepResult, best: str = "T=12", budget_s: float = 1200.0) -> Verdict:
    """``best`` is not beaten by any other depth by more than one pooled seed-std."""
    details, ok = [], res.seconds < budget_s
    for row in res.rows:
        if row == best:
            continue
        gap = res.mean(best) - res.mean(row)
        tol = float(np.sqrt((res.std(best) ** 2 + res.std(row) ** 2) / 2.0))
        ok &= gap >= -tol
        details.append(f"{best}-{row}={gap:+.4f} (tol {tol:.4f})")
    details.append(f"{res.seconds:.0f}s (budget {budget_s:.0f}s)")
    return Verdict("diffusion-depth sensitivity", ok, ", ".join(details))
