"""Closed-form convergence-bound evaluators.

These are the executable forms of the convergence guarantees for averaged
and plain low-precision SGD: the quadratic-case two-term bound, the
noise-ball lemma for strongly convex objectives (with its universal
constant chi = 44), the three-term strongly-convex bound whose floor
carries the 3 * chi^2 = 5808 prefactor, and the sigma*delta scaling
skeleton of the plain-SGD floor lower bound.  Evaluators are pure and
total on their precondition domains; each returns a per-term breakdown so
plots and tests can overlay individual contributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "CHI",
    "ProblemConstants",
    "BoundReport",
    "thm_quadratic_bound",
    "lemma_step_size",
    "lemma_min_iters",
    "lemma_noise_ball",
    "thm_strongly_convex_bound",
    "sgdlp_floor_scale",
]

CHI = 44.0  # universal constant of the fourth-moment noise-ball lemma


@dataclass(frozen=True)
class ProblemConstants:
    """Constants describing a strongly convex problem instance."""

    mu: float               # strong convexity
    l_smooth: float         # gradient Lipschitz constant
    m_hessian: float        # Hessian Lipschitz constant (0 for quadratics)
    g_bound: float          # bound on gradient sample deviation
    sigma: float            # gradient variance bound
    dim: int
    delta: float            # quantization gap
    chi: float = CHI

    def __post_init__(self):
        if min(self.mu, self.l_smooth, self.g_bound, self.delta) <= 0:
            raise ValueError("mu, l_smooth, g_bound, delta must be positive")
        if self.m_hessian < 0 or self.sigma < 0 or self.chi < 0:
            raise ValueError("m_hessian, sigma, chi must be nonnegative")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class BoundReport:
    value: float
    terms: dict = field(default_factory=dict)
    preconditions_ok: bool = True
    reasons: tuple = ()

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "terms": dict(self.terms),
            "preconditions_ok": self.preconditions_ok,
            "reasons": list(self.reasons),
        }


def _require_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")


def thm_quadratic_bound(
    w0_dist_sq: float,
    alpha: float,
    mu: float,
    total_iters: int,
    cycle: int,
    sigma: float,
    delta: float,
    dim: int,
    a_norm: float | None = None,
) -> BoundReport:
    """Averaged-iterate error bound for the quadratic case.

    transient = ||w0 - w*||^2 / (alpha^2 mu^2 T^2) and
    noise = c (alpha^2 sigma^2 + delta^2 d / 4) / (alpha^2 mu^2 T).

    The stated step-size precondition reads alpha < ||A||_2 / 2, while the
    series-convergence argument behind the proof needs alpha < 2 / ||A||_2;
    when a_norm is given both checks are recorded without deciding which
    is intended.
    """
    _require_positive(alpha=alpha, mu=mu, total_iters=total_iters, cycle=cycle, dim=dim)
    if w0_dist_sq < 0 or sigma < 0 or delta < 0:
        raise ValueError("w0_dist_sq, sigma, delta must be nonnegative")
    denom = alpha * alpha * mu * mu
    transient = w0_dist_sq / (denom * total_iters * total_iters)
    noise = cycle * (alpha * alpha * sigma * sigma + delta * delta * dim / 4.0) / (
        denom * total_iters
    )
    ok = True
    reasons = []
    if a_norm is not None:
        as_stated = alpha < 0.5 * a_norm
        series = alpha < 2.0 / a_norm
        reasons.append(f"alpha < ||A||/2 (as stated): {as_stated}")
        reasons.append(f"alpha < 2/||A|| (series convergence): {series}")
        ok = as_stated or series
    else:
        reasons.append("step-size precondition unchecked (no ||A|| given)")
    return BoundReport(
        value=transient + noise,
        terms={"transient": transient, "noise": noise},
        preconditions_ok=ok,
        reasons=tuple(reasons),
    )


def lemma_step_size(delta: float, dim: int, g_bound: float) -> float:
    """The prescribed step size alpha = delta * sqrt(d) / G."""
    _require_positive(delta=delta, dim=dim, g_bound=g_bound)
    return delta * math.sqrt(dim) / g_bound


def lemma_min_iters(
    g_bound: float, mu: float, delta: float, dim: int, w0_dist_sq: float
) -> float:
    """Iterations needed before the fourth-moment noise-ball bound applies.

    Returns 0 when the log argument is at most 1 (already inside the
    ball).
    """
    _require_positive(g_bound=g_bound, mu=mu, delta=delta, dim=dim)
    if w0_dist_sq < 0:
        raise ValueError("w0_dist_sq must be nonnegative")
    arg = mu * w0_dist_sq / (CHI * g_bound * delta * math.sqrt(dim))
    if arg <= 1.0:
        return 0.0
    return 2.0 * g_bound / (mu * delta * math.sqrt(dim)) * math.log(arg)


def lemma_noise_ball(
    g_bound: float, delta: float, dim: int, mu: float, chi: float = CHI
) -> float:
    """Fourth-moment ceiling chi^2 G^2 delta^2 d / mu^2."""
    _require_positive(g_bound=g_bound, delta=delta, dim=dim, mu=mu)
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    return chi * chi * g_bound * g_bound * delta * delta * dim / (mu * mu)


def thm_strongly_convex_bound(
    consts: ProblemConstants, cycle: int, total_iters: int, alpha: float
) -> BoundReport:
    """Three-term averaged-iterate bound for strongly convex objectives.

    floor = 3 chi^2 M^2 G^2 delta^2 d / mu^4 (the asymptotic noise ball;
    5808 * M^2 G^2 delta^2 d / mu^4 at chi = 44), plus two O(1/T) terms
    6 G^2 c / (mu^2 T) and 528 sqrt(d) delta G^3 c^2 / (gamma mu T^2)
    with gamma = min(alpha^2 mu^2 c^2, 1).
    """
    _require_positive(cycle=cycle, total_iters=total_iters, alpha=alpha)
    c = consts
    gamma = min(alpha * alpha * c.mu * c.mu * cycle * cycle, 1.0)
    floor = (
        3.0
        * c.chi**2
        * c.m_hessian**2
        * c.g_bound**2
        * c.delta**2
        * c.dim
        / c.mu**4
    )
    drift = 6.0 * c.g_bound**2 * cycle / (c.mu**2 * total_iters)
    tail = (
        528.0
        * math.sqrt(c.dim)
        * c.delta
        * c.g_bound**3
        * cycle**2
        / (gamma * c.mu * total_iters**2)
    )
    # the step-size admissibility condition is polynomial; check numerically
    lhs = (1.0 - 2.0 * alpha * c.mu + alpha * alpha * c.l_smooth) ** 2
    rhs = 1.0 - 2.0 * alpha * c.mu
    ok = lhs <= rhs and alpha * c.mu < 1.0
    reasons = (
        f"(1 - 2 alpha mu + alpha^2 L)^2 <= 1 - 2 alpha mu: {lhs <= rhs}",
        f"alpha mu < 1: {alpha * c.mu < 1.0}",
    )
    return BoundReport(
        value=floor + drift + tail,
        terms={"floor": floor, "drift": drift, "tail": tail},
        preconditions_ok=ok,
        reasons=reasons,
    )


def sgdlp_floor_scale(sigma: float, delta: float) -> float:
    """sigma * delta, the scaling skeleton of the plain-SGD floor.

    The universal constant in front is not computable, so only the
    product is exposed; consumers fit slopes, never absolute levels.
    """
    if sigma < 0 or delta < 0:
        raise ValueError("sigma and delta must be nonnegative")
    return sigma * delta
