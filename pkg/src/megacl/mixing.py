"""Per-step mixing rules that turn a current-task gradient and episodic-memory
reference gradients into one update direction.

Every rule returns a :class:`MixDecision`; the update applied by the trainer
is always ``w - lr * decision.mixed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nqp import solve_nqp


class UndefinedValueError(ArithmeticError):
    """A closed form hit a zero denominator."""


@dataclass
class MixInputs:
    g: np.ndarray
    loss_t: float
    g_ref: np.ndarray
    loss_ref: float

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.g_ref = np.asarray(self.g_ref, dtype=np.float64)
        if self.g.shape != self.g_ref.shape:
            raise ValueError("current and reference gradients differ in length")
        if not (math.isfinite(self.loss_t) and math.isfinite(self.loss_ref)):
            raise ValueError("losses must be finite")
        if self.loss_t < 0 or self.loss_ref < 0:
            raise ValueError("losses must be nonnegative")


@dataclass
class MixDecision:
    alpha1: float
    alpha2: float | np.ndarray
    mixed: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedValueError("angle with a zero vector")
    cos = float(a @ b) / (na * nb)
    return math.acos(min(1.0, max(-1.0, cos)))


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def _pair_diagnostics(inp: MixInputs) -> dict:
    """Angle, loss ratio and gradient-norm ratio of a (g, g_ref) pair."""
    g_norm = float(np.linalg.norm(inp.g))
    gref_norm = float(np.linalg.norm(inp.g_ref))
    diag = {
        "g_norm": g_norm,
        "gref_norm": gref_norm,
        "k1": _ratio(inp.loss_t, inp.loss_ref),
        "k2": _ratio(g_norm, gref_norm),
    }
    if g_norm > 0 and gref_norm > 0:
        theta_tilde = angle_between(inp.g, inp.g_ref)
        diag["theta_tilde"] = theta_tilde
        if 0 < theta_tilde < math.pi and math.isfinite(diag["k1"]) and math.isfinite(diag["k2"]):
            c1, c2 = cos_theta_closed_forms(diag["k1"], diag["k2"], theta_tilde)
            diag["cos_theta1"] = c1
            diag["cos_theta2"] = c2
    return diag


def mix_van(inp: MixInputs | None = None, g: np.ndarray | None = None) -> MixDecision:
    """Plain SGD: the current gradient, untouched."""
    g = inp.g if inp is not None else np.asarray(g, dtype=np.float64)
    return MixDecision(1.0, 0.0, g.copy())


def mix_agem(inp: MixInputs) -> MixDecision:
    """Project ``g`` onto the half-space ``{x : x . g_ref >= 0}`` when it violates it."""
    g, g_ref = inp.g, inp.g_ref
    diag = _pair_diagnostics(inp)
    dot = float(g @ g_ref)
    ref_sq = float(g_ref @ g_ref)
    if dot > 0 or ref_sq == 0:
        diag["theta"] = 0.0
        return MixDecision(1.0, 0.0, g.copy(), diag)
    alpha2 = -dot / ref_sq
    mixed = g + alpha2 * g_ref
    if np.linalg.norm(mixed) > 0 and np.linalg.norm(g) > 0:
        diag["theta"] = angle_between(mixed, g)
    return MixDecision(1.0, alpha2, mixed, diag)


def mix_gem(g: np.ndarray, ref_grads: Sequence[np.ndarray], max_iters: int = 10_000) -> MixDecision:
    """Closest vector to ``g`` that has a nonnegative dot with every reference.

    Solved through the dual NQP ``min v'Qv + c'v, v >= 0`` with ``Q = R'R``
    and ``c = 2 R'g`` where ``R`` stacks the reference gradients as columns;
    the projected gradient is then ``g + R v*``.
    """
    g = np.asarray(g, dtype=np.float64)
    if len(ref_grads) == 0:
        return MixDecision(1.0, np.zeros(0), g.copy())
    R = np.column_stack([np.asarray(r, dtype=np.float64) for r in ref_grads])
    dots = R.T @ g
    if np.all(dots >= 0):
        return MixDecision(1.0, np.zeros(R.shape[1]), g.copy(), {"violated": 0})
    Q = R.T @ R
    sol = solve_nqp(Q, 2.0 * dots, max_iters=max_iters)
    v = sol.x
    mixed = g + R @ v
    return MixDecision(1.0, v, mixed, {"violated": int(np.sum(dots < 0)),
                                       "qp_iterations": sol.iterations,
                                       "qp_residual": sol.residual})


def mix_mega1(inp: MixInputs, epsilon: float) -> MixDecision:
    """Loss-ratio weighting, or full deference to memory once the current loss is small."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if inp.loss_t > epsilon:
        alpha1, alpha2 = 1.0, inp.loss_ref / inp.loss_t
    elif inp.loss_t == 0 and inp.loss_ref == 0:
        alpha1, alpha2 = 1.0, 0.0
    else:
        alpha1, alpha2 = 0.0, 1.0
    mixed = alpha1 * inp.g + alpha2 * inp.g_ref
    diag = _pair_diagnostics(inp)
    if np.linalg.norm(mixed) > 0 and np.linalg.norm(inp.g) > 0:
        diag["theta"] = angle_between(mixed, inp.g)
    return MixDecision(alpha1, alpha2, mixed, diag)


def mega2_angle(k: float, theta_tilde: float) -> float:
    """Rotation angle maximizing ``k cos(b) + cos(theta_tilde - b)`` over b in [0, pi].

    ``k = inf`` stands for a zero reference loss.
    """
    if not (0.0 <= theta_tilde <= math.pi):
        raise ValueError(f"theta_tilde={theta_tilde} outside [0, pi]")
    if k < 0:
        raise ValueError("loss ratio must be nonnegative")
    if math.isinf(k) or theta_tilde == 0.0:
        return 0.0
    if k == 0.0:
        return theta_tilde
    if theta_tilde == math.pi:
        # objective reduces to (k - 1) cos b
        if k > 1:
            return 0.0
        return math.pi if k < 1 else math.pi / 2
    theta = math.pi / 2 - math.atan((k + math.cos(theta_tilde)) / math.sin(theta_tilde))
    # the optimum lies inside (0, theta_tilde); rounding can overshoot by an ulp
    return min(theta, theta_tilde)


def solve_coefficients(g: np.ndarray, g_ref: np.ndarray, theta: float) -> tuple[float, float]:
    """Weights ``(a, b)`` such that ``a g + b g_ref`` has the norm of ``g`` and
    sits at angle ``theta`` from it, rotated toward ``g_ref``.

    Solves the 2x2 Gram system directly. Parallel or zero references make the
    system singular and fall back to ``(1, 0)``.
    """
    gg = float(g @ g)
    rr = float(g_ref @ g_ref)
    gr = float(g @ g_ref)
    det = gg * rr - gr * gr
    if gg == 0 or rr == 0 or det <= 1e-14 * gg * rr:
        return 1.0, 0.0
    g_norm, r_norm = math.sqrt(gg), math.sqrt(rr)
    theta_tilde = math.acos(min(1.0, max(-1.0, gr / (g_norm * r_norm))))
    rhs1 = gg * math.cos(theta)
    rhs2 = g_norm * r_norm * math.cos(theta_tilde - theta)
    a = (rr * rhs1 - gr * rhs2) / det
    b = (gg * rhs2 - gr * rhs1) / det
    return a, b


def mix_mega2(inp: MixInputs) -> MixDecision:
    """Rotate ``g`` toward ``g_ref`` by the loss-balanced angle, keeping its norm."""
    g, g_ref = inp.g, inp.g_ref
    diag = _pair_diagnostics(inp)
    g_norm, r_norm = diag["g_norm"], diag["gref_norm"]
    if g_norm == 0:
        diag["degenerate"] = "zero_current_gradient"
        return MixDecision(1.0, 0.0, np.zeros_like(g), diag)
    if r_norm == 0:
        diag["degenerate"] = "zero_reference_gradient"
        diag["theta"] = 0.0
        return MixDecision(1.0, 0.0, g.copy(), diag)

    k = math.inf if inp.loss_ref == 0 else inp.loss_t / inp.loss_ref
    theta_tilde = diag["theta_tilde"]
    theta = mega2_angle(k, theta_tilde)
    diag["theta"] = theta
    if theta == 0.0:
        a, b = 1.0, 0.0
    elif k == 0.0 or theta == math.pi:
        a, b = 0.0, g_norm / r_norm
    else:
        a, b = solve_coefficients(g, g_ref, theta)
    return MixDecision(a, b, a * g + b * g_ref, diag)


def cos_theta_closed_forms(k1: float, k2: float, theta_tilde: float) -> tuple[float, float]:
    """Cosines of the angle between ``g`` and the loss-ratio mix (first) and
    the rotation mix (second), as functions of the loss and norm ratios."""
    if k1 < 0 or k2 < 0:
        raise ValueError("ratios must be nonnegative")

    def f(k):
        if math.isinf(k):
            return 1.0
        den_sq = k * k + 2 * k * math.cos(theta_tilde) + 1
        if den_sq <= 0:
            raise UndefinedValueError("zero denominator")
        return (k + math.cos(theta_tilde)) / math.sqrt(den_sq)

    return f(k1 * k2), f(k1)
