"""Low-precision SGD and stochastic weight averaging loops.

The update rule quantizes the weights themselves every step (the gradient
accumulator lives on the low-precision grid), optionally through a
quantized momentum buffer.  The running average is kept in working
precision, or projected through its own quantizer when one is configured.
Capture into the average happens after the quantized update of the same
iteration, every ``cycle`` steps once the warm-up phase is over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quant import QuantizerSpec, RngStream

__all__ = [
    "LrSchedule",
    "QuantizerSet",
    "TrainConfig",
    "AveragingState",
    "CheckpointRow",
    "RunRecord",
    "RunError",
    "sgd_step_lp",
    "sgd_step_momentum_lp",
    "swa_update",
    "swa_update_quantized",
    "checkpoint_times",
    "run_swalp",
    "run_sgd",
]


@dataclass(frozen=True)
class LrSchedule:
    """Step-size schedule.

    "constant" keeps alpha throughout.  "warmup_linear" is the standard
    budget shape scaled to the warm-up length: constant alpha for the
    first half, linear decay to floor_factor * alpha through 90%, then
    constant; after the warm-up the averaging phase runs at the constant
    swa_alpha (defaults to the decayed floor).
    """

    alpha: float
    kind: str = "constant"
    decay_start: float = 0.5
    decay_end: float = 0.9
    floor_factor: float = 0.01
    swa_alpha: float | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind not in ("constant", "warmup_linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.decay_start < self.decay_end <= 1.0:
            raise ValueError("need 0 < decay_start < decay_end <= 1")
        if self.floor_factor <= 0:
            raise ValueError("floor_factor must be positive")

    def at(self, t: int, warmup: int) -> float:
        if self.kind == "constant":
            return self.alpha
        floor = self.floor_factor * self.alpha
        if t > warmup:
            return floor if self.swa_alpha is None else self.swa_alpha
        p = t / max(warmup, 1)
        if p < self.decay_start:
            return self.alpha
        if p < self.decay_end:
            frac = (p - self.decay_start) / (self.decay_end - self.decay_start)
            return self.alpha + frac * (floor - self.alpha)
        return floor

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "alpha": self.alpha}
        if self.kind == "warmup_linear":
            d.update(
                decay_start=self.decay_start,
                decay_end=self.decay_end,
                floor_factor=self.floor_factor,
            )
            if self.swa_alpha is not None:
                d["swa_alpha"] = self.swa_alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LrSchedule":
        return cls(
            alpha=float(d["alpha"]),
            kind=d.get("kind", "constant"),
            decay_start=float(d.get("decay_start", 0.5)),
            decay_end=float(d.get("decay_end", 0.9)),
            floor_factor=float(d.get("floor_factor", 0.01)),
            swa_alpha=(None if d.get("swa_alpha") is None else float(d["swa_alpha"])),
        )


@dataclass(frozen=True)
class QuantizerSet:
    """The six quantization policies a run can bind."""

    weights: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    activations: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    gradients: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    errors: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    momentum: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    average: QuantizerSpec = field(default_factory=QuantizerSpec.identity)

    def to_dict(self) -> dict:
        return {
            name: getattr(self, name).to_dict()
            for name in (
                "weights",
                "activations",
                "gradients",
                "errors",
                "momentum",
                "average",
            )
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerSet":
        kwargs = {}
        for name in ("weights", "activations", "gradients", "errors", "momentum", "average"):
            if name in d and d[name] is not None:
                kwargs[name] = QuantizerSpec.from_dict(d[name])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int
    schedule: LrSchedule
    warmup_iters: int = 0
    cycle: int = 1
    momentum: float = 0.0
    quantizers: QuantizerSet = field(default_factory=QuantizerSet)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.cycle <= self.total_iters:
            raise ValueError("need 1 <= cycle <= total_iters")
        if not 0 <= self.warmup_iters < self.total_iters:
            raise ValueError("need 0 <= warmup_iters < total_iters")
        if not 0 <= self.momentum < 1:
            raise ValueError("need 0 <= momentum < 1")

    def to_dict(self) -> dict:
        return {
            "total_iters": self.total_iters,
            "warmup_iters": self.warmup_iters,
            "cycle": self.cycle,
            "momentum": self.momentum,
            "schedule": self.schedule.to_dict(),
            "quantizers": self.quantizers.to_dict(),
            "seed": self.seed,
        }


@dataclass
class AveragingState:
    """Running equal-weight mean of captured parameter sets."""

    w_bar: list[np.ndarray] | None = None
    count: int = 0


def swa_update(state: AveragingState, params: list[np.ndarray]) -> AveragingState:
    """Fold one parameter set into the running mean in working precision."""
    m = state.count
    if m == 0:
        return AveragingState([p.copy() for p in params], 1)
    w_bar = [(wb * m + p) / (m + 1) for wb, p in zip(state.w_bar, params)]
    return AveragingState(w_bar, m + 1)


def swa_update_quantized(
    state: AveragingState,
    params: list[np.ndarray],
    q_swa: QuantizerSpec,
    rng: RngStream | None = None,
) -> AveragingState:
    """As swa_update, then project the mean onto the q_swa grid.

    The mean itself is computed in working precision before quantizing.
    """
    new = swa_update(state, params)
    if not q_swa.is_identity:
        new.w_bar = [q_swa.apply(wb, rng) for wb in new.w_bar]
    return new


def sgd_step_lp(
    w: np.ndarray,
    grad: np.ndarray,
    alpha: float,
    q_w: QuantizerSpec,
    rng: RngStream | None = None,
) -> np.ndarray:
    """w' = Q_W(w - alpha * grad); the result lies on Q_W's grid."""
    if w.shape != grad.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {grad.shape}")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient")
    return q_w.apply(w - alpha * grad, rng)


def sgd_step_momentum_lp(
    w: np.ndarray,
    v: np.ndarray,
    grad: np.ndarray,
    alpha: float,
    rho: float,
    q_m: QuantizerSpec,
    q_w: QuantizerSpec,
    rng: RngStream | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Momentum step with the velocity quantized on read.

    v' = rho * Q_M(v) + grad and w' = Q_W(w - alpha * v'); v' itself is
    stored unquantized until the next step reads it through Q_M.
    """
    if not (np.isfinite(grad).all() and np.isfinite(v).all()):
        raise ValueError("non-finite gradient or velocity")
    v_new = rho * q_m.apply(v, rng) + grad
    return q_w.apply(w - alpha * v_new, rng), v_new


@dataclass
class CheckpointRow:
    t: int
    dist_sq: float | None = None
    grad_norm: float | None = None
    train_err: float | None = None
    test_err: float | None = None
    train_loss: float | None = None  # kept in memory; not part of the CSV schema


@dataclass
class RunRecord:
    arm: str
    seed: int
    config: dict
    rows: list[CheckpointRow]
    final_params: list[np.ndarray]
    final_average: list[np.ndarray] | None = None
    averaged_count: int = 0

    def series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(t, value) arrays for one metric, skipping missing entries."""
        ts, vals = [], []
        for row in self.rows:
            v = getattr(row, name)
            if v is not None:
                ts.append(row.t)
                vals.append(v)
        return np.asarray(ts, dtype=np.float64), np.asarray(vals, dtype=np.float64)


class RunError(RuntimeError):
    """Raised when a run dies; carries the partial record for postmortem."""

    def __init__(self, message: str, partial: RunRecord):
        super().__init__(message)
        self.partial = partial


def checkpoint_times(
    total: int, warmup: int, cycle: int, average: bool, ratio: float = 1.25
) -> list[int]:
    """Geometric checkpoint grid, snapped to capture times for averaged runs.

    Keeping the grid geometric bounds the number of rows for very long
    runs; snapping makes every logged average freshly updated.
    """
    ts: set[int] = set()
    t = 1.0
    while t <= total:
        ts.add(int(math.ceil(t)))
        t *= ratio
    ts.add(total)
    if not average:
        return sorted(ts)
    snapped = set()
    first = warmup + cycle
    for t in ts:
        s = max(t, first)
        s = warmup + cycle * math.ceil((s - warmup) / cycle)
        if s <= total:
            snapped.add(s)
    last = warmup + cycle * ((total - warmup) // cycle)
    if last >= first:
        snapped.add(last)
    return sorted(snapped)


def _run(problem, cfg: TrainConfig, rng: RngStream | None, average: bool) -> RunRecord:
    stream = rng if rng is not None else RngStream.derive(cfg.seed, "run")
    params = problem.init_params()
    vel = None
    if cfg.momentum > 0:
        vel = [np.zeros_like(p) for p in params]
    avg = AveragingState()
    q = cfg.quantizers
    warmup, cycle = cfg.warmup_iters, cfg.cycle
    pending = checkpoint_times(cfg.total_iters, warmup, cycle, average)
    next_cp = pending[0] if pending else None
    cp_index = 0
    rows: list[CheckpointRow] = []

    def record() -> RunRecord:
        return RunRecord(
            arm=getattr(problem, "name", "run"),
            seed=cfg.seed,
            config=cfg.to_dict(),
            rows=rows,
            final_params=params,
            final_average=None if avg.w_bar is None else avg.w_bar,
            averaged_count=avg.count,
        )

    try:
        for t in range(1, cfg.total_iters + 1):
            alpha = cfg.schedule.at(t, warmup)
            grads = problem.grad_sample(params, t, stream)
            if vel is None:
                params = [
                    sgd_step_lp(w, g, alpha, q.weights, stream)
                    for w, g in zip(params, grads)
                ]
            else:
                stepped = [
                    sgd_step_momentum_lp(
                        w, v, g, alpha, cfg.momentum, q.momentum, q.weights, stream
                    )
                    for w, v, g in zip(params, vel, grads)
                ]
                params = [s[0] for s in stepped]
                vel = [s[1] for s in stepped]
            if average and t > warmup and (t - warmup) % cycle == 0:
                avg = swa_update_quantized(avg, params, q.average, stream)
            if t == next_cp:
                target = avg.w_bar if average else params
                if target is not None:
                    rows.append(CheckpointRow(t=t, **problem.metrics(target)))
                cp_index += 1
                next_cp = pending[cp_index] if cp_index < len(pending) else None
    except Exception as exc:  # flush partial rows for postmortem
        raise RunError(f"run failed after {len(rows)} checkpoints: {exc}", record()) from exc
    return record()


def run_swalp(problem, cfg: TrainConfig, rng: RngStream | None = None) -> RunRecord:
    """Low-precision SGD with periodic capture into a working-precision mean.

    Warm-up runs for cfg.warmup_iters steps under the schedule; capture
    happens every cfg.cycle steps after that, following the quantized
    update of the same iteration.  The returned average is the
    working-precision (or Q_SWA-grid) mean, never re-quantized by the
    weight quantizer.
    """
    return _run(problem, cfg, rng, average=True)


def run_sgd(problem, cfg: TrainConfig, rng: RngStream | None = None) -> RunRecord:
    """The same loop without averaging; identity quantizers give the
    full-precision baseline."""
    return _run(problem, cfg, rng, average=False)
