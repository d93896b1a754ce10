"""Experiment runner: arms, sweeps, metric fitting, CSV/JSON emission.

Every run writes one CSV per arm (schema ``t,dist_sq,grad_norm,train_err,
test_err``, empty fields for missing metrics) plus a JSON sidecar echoing
the exact resolved configuration and seed, so any output can be
regenerated byte-for-byte.  RNG streams are derived from
(root seed, arm id, purpose), which keeps each arm's results independent of
whatever else runs in the same invocation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import models
from .bounds import thm_quadratic_bound
from .config import (
    ArmSpec,
    ConfigError,
    ExperimentConfig,
    SweepSpec,
    experiment_from_dict,
)
from .data import (
    SyntheticSpec,
    gen_synthetic_linreg,
    load_linreg_dataset,
    load_mnist_split,
    mnist_dir,
)
from .models import MlpModel, QuadraticObjective
from .optim import RunRecord, TrainConfig, run_sgd, run_swalp
from .problems import LinRegProblem, LogRegProblem, MlpProblem, QuadraticProblem
from .quant import (
    FixedPointFormat,
    QuantizerSpec,
    RngStream,
    RoundingMode,
    quantize_fixed,
)

__all__ = [
    "CSV_HEADER",
    "run_experiment",
    "run_sweep",
    "fit_loglog_slope",
    "estimate_floor",
    "floor_scaling_experiment",
    "quadratic_bound_experiment",
    "write_record_csv",
    "read_csv_columns",
]

CSV_HEADER = ("t", "dist_sq", "grad_norm", "train_err", "test_err")

_dataset_cache: dict = {}


# ---------------------------------------------------------------------------
# dataset / problem construction
# ---------------------------------------------------------------------------


def _get_linreg_dataset(cfg: ExperimentConfig):
    ds = cfg.dataset
    kind = ds.get("kind", "synthetic")
    if kind == "file":
        key = ("linreg-file", ds["path"])
        if key not in _dataset_cache:
            _dataset_cache[key] = load_linreg_dataset(ds["path"])
        return _dataset_cache[key]
    if kind != "synthetic":
        raise ConfigError(f"unknown linreg dataset kind {kind!r}")
    spec = SyntheticSpec(
        dim=int(ds.get("dim", 256)),
        n_samples=int(ds.get("n_samples", 4096)),
        sigma_x=float(ds.get("sigma_x", 1.0)),
        sigma_u=float(ds.get("sigma_u", 1.0)),
        seed=int(ds.get("seed", cfg.seed)),
    )
    key = ("linreg-synth", spec)
    if key not in _dataset_cache:
        _dataset_cache[key] = gen_synthetic_linreg(spec)
    return _dataset_cache[key]


def _get_mnist(cfg: ExperimentConfig, data_dir, split: str):
    base = mnist_dir(data_dir or cfg.dataset.get("dir"))
    if base is None:
        raise ConfigError(
            "MNIST directory not given (use --data-dir or LOWPREC_DATA_DIR)"
        )
    key = ("mnist", str(base), split)
    if key not in _dataset_cache:
        _dataset_cache[key] = load_mnist_split(base, split)
    return _dataset_cache[key]


def _build_quadratic(cfg: ExperimentConfig) -> QuadraticProblem:
    p = cfg.model_params
    dim = int(p.get("dim", 16))
    mu = float(p.get("mu", 1.0))
    eig_max = float(p.get("eig_max", 2.0))
    sigma = float(p.get("sigma", 1.0))
    init = RngStream.derive(cfg.seed, "quadratic-instance")
    w_star = p.get("w_star_scale", 0.5) * (2.0 * init.uniforms(dim) - 1.0)
    obj = QuadraticObjective(
        a_matrix=np.diag(np.linspace(mu, eig_max, dim)),
        w_star=w_star,
        mu=mu,
        noise_sigma=sigma,
    )
    w0 = w_star + float(p.get("w0_offset", 1.0))
    return QuadraticProblem(obj, w0)


def _build_problem(cfg: ExperimentConfig, arm: ArmSpec, tc: TrainConfig, data_dir):
    if cfg.model == "quadratic":
        problem = _build_quadratic(cfg)
    elif cfg.model == "linreg":
        data = _get_linreg_dataset(cfg)
        problem = LinRegProblem(
            data, batch_size=cfg.batch_size, q_grad=tc.quantizers.gradients
        )
    elif cfg.model == "logreg":
        train = _get_mnist(cfg, data_dir, "train")
        test = (
            _get_mnist(cfg, data_dir, "test") if cfg.dataset.get("test", True) else None
        )
        problem = LogRegProblem(
            train,
            batch_size=cfg.batch_size,
            l2=float(cfg.model_params.get("l2", 1e-4)),
            test=test,
            batch_seed=cfg.seed,
            q_grad=tc.quantizers.gradients,
        )
    elif cfg.model == "mlp":
        train = _get_mnist(cfg, data_dir, "train")
        test = (
            _get_mnist(cfg, data_dir, "test") if cfg.dataset.get("test", True) else None
        )
        model = MlpModel(
            hidden=int(cfg.model_params.get("hidden", 32)),
            q_act=tc.quantizers.activations,
            q_err=tc.quantizers.errors,
            q_grad=tc.quantizers.gradients,
        )
        problem = MlpProblem(
            train,
            model=model,
            batch_size=cfg.batch_size,
            test=test,
            init_seed=cfg.seed,
            batch_seed=cfg.seed,
        )
    else:  # pragma: no cover - rejected earlier by config validation
        raise ConfigError(f"unknown model {cfg.model!r}")
    return problem


def _arm_worker(cfg: ExperimentConfig, arm: ArmSpec, data_dir, stream_tag: str | None = None):
    tc = cfg.train_config_for(arm)
    problem = _build_problem(cfg, arm, tc, data_dir)
    stream = RngStream.derive(cfg.seed, stream_tag or arm.name, "train")
    runner = run_swalp if arm.algorithm == "swalp" else run_sgd
    record = runner(problem, tc, rng=stream)
    record.arm = arm.name
    return record


# ---------------------------------------------------------------------------
# CSV / JSON emission
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_record_csv(record: RunRecord, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(CSV_HEADER) + "\n")
        for row in record.rows:
            f.write(
                f"{row.t},{_fmt(row.dist_sq)},{_fmt(row.grad_norm)},"
                f"{_fmt(row.train_err)},{_fmt(row.test_err)}\n"
            )


def read_csv_columns(path: str | Path) -> dict[str, np.ndarray]:
    """Read a record CSV back as {column: float array}; blanks become NaN."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        raise ValueError(f"empty CSV {path}")
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array(
            [float(r[i]) if r[i] != "" else np.nan for r in rows], dtype=np.float64
        )
    return cols


def _final_metrics(record: RunRecord) -> dict:
    if not record.rows:
        return {}
    last = record.rows[-1]
    return {
        "t": last.t,
        "dist_sq": last.dist_sq,
        "grad_norm": last.grad_norm,
        "train_err": last.train_err,
        "test_err": last.test_err,
        "train_loss": last.train_loss,
    }


def _linreg_quant_reference(cfg: ExperimentConfig):
    """||Q_nearest(w*) - w*||^2 for the first fixed-point weight quantizer."""
    fmt = None
    for arm in cfg.arms:
        q = cfg.train_config_for(arm).quantizers.weights
        if q.kind == "fixed":
            fmt = q.fixed
            break
    if fmt is None:
        return None
    data = _get_linreg_dataset(cfg)
    w_star = models.linreg_solve_exact(data)
    q = quantize_fixed(w_star, fmt, RoundingMode.NEAREST)
    return float(np.sum((q - w_star) ** 2))


def run_experiment(
    cfg: ExperimentConfig, data_dir=None, jobs: int = 1
) -> dict:
    """Run every arm, write one CSV + sidecar per arm and a JSON summary.

    Returns the summary dict (with in-memory records under "records").
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # fail before any compute if the dataset reference is unresolvable
    for arm in cfg.arms:
        cfg.train_config_for(arm)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_arm_worker, cfg, arm, data_dir) for arm in cfg.arms
            ]
            records = [f.result() for f in futures]
    else:
        records = [_arm_worker(cfg, arm, data_dir) for arm in cfg.arms]

    summary: dict = {
        "experiment": cfg.to_dict(),
        "arms": {},
        "references": {},
    }
    if cfg.model == "linreg":
        ref = _linreg_quant_reference(cfg)
        if ref is not None:
            summary["references"]["quant_noise_dist_sq"] = ref

    for arm, record in zip(cfg.arms, records):
        csv_path = out / f"{cfg.exp_id}_{arm.name}.csv"
        write_record_csv(record, csv_path)
        sidecar = {
            "experiment": cfg.exp_id,
            "arm": arm.name,
            "algorithm": arm.algorithm,
            "seed": cfg.seed,
            "config": record.config,
            "final": _final_metrics(record),
            "averaged_count": record.averaged_count,
        }
        with open(out / f"{cfg.exp_id}_{arm.name}.json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
        summary["arms"][arm.name] = {
            "algorithm": arm.algorithm,
            "csv": str(csv_path),
            "final": _final_metrics(record),
        }

    with open(out / f"{cfg.exp_id}_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    summary["records"] = {r.arm: r for r in records}
    return summary


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _patch_quantizer_dicts(qdict: dict, frac_bits: int) -> dict:
    out = {}
    for slot, spec in qdict.items():
        if isinstance(spec, dict) and spec.get("kind") == "fixed":
            spec = dict(spec, frac=frac_bits, word=frac_bits + 2)
        out[slot] = spec
    return out


def apply_sweep_value(base: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    """Derive the experiment config for one swept value.

    frac_bits keeps two integer bits (word = frac + 2), matching the
    fixed-point precision ladder; cycle retunes the averaging period;
    swa_word_bits swaps in a block-float average quantizer of that width.
    """
    d = base.to_dict()
    d["id"] = f"{base.exp_id}_{parameter}={value}"
    if parameter == "frac_bits":
        v = int(value)
        train = dict(d["train"])
        if "quantizers" in train:
            train["quantizers"] = _patch_quantizer_dicts(train["quantizers"], v)
        d["train"] = train
        for arm in d["arms"]:
            if arm.get("quantizers"):
                arm["quantizers"] = _patch_quantizer_dicts(arm["quantizers"], v)
    elif parameter == "cycle":
        train = dict(d["train"])
        train["cycle"] = int(value)
        d["train"] = train
    elif parameter == "swa_word_bits":
        train = dict(d["train"])
        q = dict(train.get("quantizers", {}))
        q["average"] = {
            "kind": "bfp",
            "word": int(value),
            "exp": 8,
            "block": "small",
            "round": "stochastic",
        }
        train["quantizers"] = q
        d["train"] = train
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    d.pop("tolerances", None)
    d["tolerances"] = base.tolerances
    return experiment_from_dict(
        {
            "id": d["id"],
            "model": d["model"],
            "arms": d["arms"],
            "train": d["train"],
            "dataset": d["dataset"],
            "model_params": d["model_params"],
            "batch_size": d["batch_size"],
            "seed": d["seed"],
            "out_dir": d["out_dir"],
            "tolerances": d["tolerances"],
        }
    )


def run_sweep(spec: SweepSpec, data_dir=None, jobs: int = 1) -> dict:
    """Final-metric table over the swept values, one row per value per arm."""
    out = Path(spec.base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for value in spec.values:
        cfg_v = apply_sweep_value(spec.base, spec.parameter, value)
        for arm in cfg_v.arms:
            tag = f"{arm.name}@{spec.parameter}={value}"
            tasks.append((value, cfg_v, arm, tag))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_arm_worker, cfg_v, arm, data_dir, tag)
                for value, cfg_v, arm, tag in tasks
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _arm_worker(cfg_v, arm, data_dir, tag) for value, cfg_v, arm, tag in tasks
        ]

    rows = []
    table: dict = {}
    for (value, cfg_v, arm, tag), record in zip(tasks, results):
        final = _final_metrics(record)
        rows.append((value, arm.name, final))
        table.setdefault(str(value), {})[arm.name] = final

    csv_path = out / f"{spec.base.exp_id}_{spec.parameter}_sweep.csv"
    with open(csv_path, "w", newline="") as f:
        f.write("param,value,arm,t,dist_sq,grad_norm,train_err,test_err\n")
        for value, arm_name, final in rows:
            f.write(
                f"{spec.parameter},{value},{arm_name},{final.get('t', '')},"
                f"{_fmt(final.get('dist_sq'))},{_fmt(final.get('grad_norm'))},"
                f"{_fmt(final.get('train_err'))},{_fmt(final.get('test_err'))}\n"
            )
    summary = {
        "parameter": spec.parameter,
        "values": list(spec.values),
        "base": spec.base.to_dict(),
        "table": table,
        "csv": str(csv_path),
    }
    with open(out / f"{spec.base.exp_id}_{spec.parameter}_sweep.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


# ---------------------------------------------------------------------------
# series statistics
# ---------------------------------------------------------------------------


def fit_loglog_slope(ts, values, window: float = 0.5) -> float:
    """Least-squares slope of log(value) against log(t) over the tail.

    window gives the fraction of points (from the end) entering the fit;
    at least 10 points must land in the window and every value must be
    positive.
    """
    ts = np.asarray(ts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ts.shape != values.shape or ts.ndim != 1:
        raise ValueError("ts and values must be equal-length vectors")
    if np.any(values <= 0) or np.any(ts <= 0):
        raise ValueError("nonpositive values in series")
    k = int(math.ceil(window * len(ts)))
    if k < 10:
        raise ValueError(f"need >= 10 points in window, have {k}")
    return float(np.polyfit(np.log(ts[-k:]), np.log(values[-k:]), 1)[0])


def estimate_floor(values, tail_fraction: float = 0.5) -> tuple[float, bool]:
    """Mean of the tail window plus a stationarity flag.

    The flag compares the two halves of the tail: stationary means their
    means differ by at most twice the standard error of that difference.
    """
    values = np.asarray(values, dtype=np.float64)
    k = int(math.ceil(tail_fraction * len(values)))
    if k < 10:
        raise ValueError(f"need >= 10 points in tail, have {k}")
    tail = values[-k:]
    h = k // 2
    first, second = tail[:h], tail[h:]
    se = math.sqrt(first.var() / len(first) + second.var() / len(second))
    stationary = abs(float(first.mean() - second.mean())) <= 2.0 * se + 1e-300
    return float(tail.mean()), stationary


# ---------------------------------------------------------------------------
# canned studies: plain-SGD floor scaling and the quadratic bound check
# ---------------------------------------------------------------------------


def _lp_chain_floor(
    delta_log2: int,
    alpha: float,
    sigma: float,
    steps: int,
    replicas: int,
    rng: RngStream,
    average_from: int | None = None,
) -> dict:
    """Replicated scalar chains w <- Q(w - alpha (w + sigma z)).

    Each replica is an independent one-dimensional run; the recorded
    series is the replica mean of w^2 at a stride wide enough for tail
    samples to decorrelate.  With average_from set, also returns the
    replica-mean squared error of the running average.
    """
    frac = -delta_log2
    fmt = FixedPointFormat(word_bits=frac + 6, frac_bits=frac)  # range +-32, never binding
    w = np.full(replicas, 1.0)
    wbar = np.zeros(replicas)
    captures = 0
    stride = max(20, int(2.0 / alpha))
    series = []
    for t in range(1, steps + 1):
        g = w + sigma * rng.normals(replicas)
        w = quantize_fixed(w - alpha * g, fmt, RoundingMode.STOCHASTIC, rng)
        if average_from is not None and t > average_from:
            captures += 1
            wbar += (w - wbar) / captures
        if t % stride == 0:
            series.append(float(np.mean(w * w)))
    out = {"series": np.asarray(series), "stride": stride}
    if average_from is not None:
        out["avg_sq"] = float(np.mean(wbar * wbar))
    return out


def floor_scaling_experiment(
    delta_log2s=(-2, -3, -4, -5, -6, -7, -8),
    alpha_factors=(1.0, 2.0, 4.0, 8.0),
    sigma: float = 1.0,
    steps: int = 60000,
    replicas: int = 64,
    swalp_delta_log2: int = -4,
    swalp_steps: int = 1_000_000,
    seed: int = 0,
) -> dict:
    """Asymptotic plain-SGD error floors across quantization gaps.

    For each gap the step size is tuned over alpha = factor * delta /
    sigma, keeping the smallest stationary floor.  Returns the per-gap
    floors, the fitted log-floor vs log-gap slope, and the averaged-run
    error at the swalp_delta gap for the floor-vs-average comparison.
    """
    floors = {}
    chosen_alpha = {}
    per_gap = {}
    for dl in delta_log2s:
        delta = math.ldexp(1.0, dl)
        best = None
        cells = []
        for factor in alpha_factors:
            alpha = factor * delta / sigma
            rng = RngStream.derive(seed, "floor", dl, factor)
            chain = _lp_chain_floor(dl, alpha, sigma, steps, replicas, rng)
            floor, stationary = estimate_floor(chain["series"], 0.5)
            cells.append({"alpha": alpha, "floor": floor, "stationary": stationary})
            # smallest floor wins; divergent cells report huge floors and
            # eliminate themselves, so the stationarity flag stays advisory
            if best is None or floor < best[2]:
                best = (stationary, alpha, floor)
        floors[dl] = best[2]
        chosen_alpha[dl] = best[1]
        per_gap[dl] = cells

    logs = np.array([math.ldexp(1.0, dl) for dl in delta_log2s])
    slope = float(np.polyfit(np.log(logs), np.log([floors[dl] for dl in delta_log2s]), 1)[0])

    alpha = chosen_alpha[swalp_delta_log2]
    rng = RngStream.derive(seed, "floor-swalp", swalp_delta_log2)
    chain = _lp_chain_floor(
        swalp_delta_log2,
        alpha,
        sigma,
        swalp_steps,
        max(replicas // 4, 8),
        rng,
        average_from=swalp_steps // 10,
    )
    return {
        "floors": floors,
        "alphas": chosen_alpha,
        "cells": per_gap,
        "slope": slope,
        "swalp_delta_log2": swalp_delta_log2,
        "swalp_avg_sq": chain["avg_sq"],
        "swalp_floor": floors[swalp_delta_log2],
    }


def quadratic_bound_experiment(
    n_seeds: int = 20,
    dim: int = 16,
    mu: float = 1.0,
    eig_max: float = 2.0,
    sigma: float = 1.0,
    frac_bits: int = 6,
    word_bits: int = 8,
    alpha: float = 0.1,
    total_iters: int = 20000,
    cycle: int = 1,
    root_seed: int = 0,
    min_t: int = 1000,
) -> dict:
    """Measured averaged-run error vs the closed-form quadratic bound.

    Runs one averaged low-precision run per seed on a diagonal quadratic
    with exactly known noise level, then compares the seed-mean error at
    every logged step from min_t on against the bound evaluated there.
    """
    from .optim import LrSchedule, QuantizerSet

    delta = math.ldexp(1.0, -frac_bits)
    q = QuantizerSet(
        weights=QuantizerSpec.fixed_point(word_bits, frac_bits, RoundingMode.STOCHASTIC)
    )
    per_seed = []
    ts_ref = None
    w0_dist_sq = float(dim)  # w0 = w* + 1 in every coordinate
    for s in range(n_seeds):
        inst = RngStream.derive(root_seed, "bound-instance", s)
        w_star = 0.5 * (2.0 * inst.uniforms(dim) - 1.0)
        obj = QuadraticObjective(
            a_matrix=np.diag(np.linspace(mu, eig_max, dim)),
            w_star=w_star,
            mu=mu,
            noise_sigma=sigma,
        )
        problem = QuadraticProblem(obj, w_star + 1.0)
        cfg = TrainConfig(
            total_iters=total_iters,
            schedule=LrSchedule(alpha=alpha),
            warmup_iters=0,
            cycle=cycle,
            momentum=0.0,
            quantizers=q,
            seed=root_seed + s,
        )
        record = run_swalp(problem, cfg, rng=RngStream.derive(root_seed, "bound-run", s))
        ts, vals = record.series("dist_sq")
        if ts_ref is None:
            ts_ref = ts
        per_seed.append(vals)

    mean_curve = np.mean(np.stack(per_seed), axis=0)
    mask = ts_ref >= min_t
    bound_curve = np.array(
        [
            thm_quadratic_bound(
                w0_dist_sq, alpha, mu, int(t), cycle, sigma, delta, dim, a_norm=eig_max
            ).value
            for t in ts_ref
        ]
    )
    return {
        "ts": ts_ref,
        "measured_mean": mean_curve,
        "bound": bound_curve,
        "checked": ts_ref[mask],
        "ok": bool(np.all(mean_curve[mask] <= bound_curve[mask])),
        "margin": float(np.min(bound_curve[mask] / np.maximum(mean_curve[mask], 1e-300))),
    }
