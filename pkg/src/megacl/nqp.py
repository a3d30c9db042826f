"""Nonnegative quadratic programs: minimize v'Qv + c'v subject to v >= 0.

The objective carries no 1/2 factor, so its gradient is ``2Qv + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NqpConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"NQP solver did not converge after {iterations} iterations "
                         f"(KKT residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass
class NqpResult:
    x: np.ndarray
    iterations: int
    residual: float
    objective: float
    history: list[float] = field(default_factory=list, repr=False)


def objective(Q, c, v):
    return float(v @ Q @ v + c @ v)


def kkt_residual(Q, c, v, tol):
    """Largest complementarity violation at ``v``.

    Coordinates at the bound (``v_i <= tol``) only need a gradient that is not
    pointing further into the bound; interior ones need a vanishing gradient.
    """
    if v.size == 0:
        return 0.0
    grad = 2.0 * Q @ v + c
    at_bound = v <= tol
    viol = np.where(at_bound, np.maximum(-grad, 0.0), np.abs(grad))
    viol = np.maximum(viol, np.maximum(-v, 0.0))
    return float(viol.max())


def _validate(Q, c):
    Q = np.asarray(Q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n = c.shape[0]
    if Q.shape != (n, n):
        raise ValueError(f"Q has shape {Q.shape}, expected ({n}, {n})")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-10 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ValueError("Q must be symmetric")
    if n and np.linalg.eigvalsh(Q).min() < -1e-10 * max(1.0, np.abs(Q).max()):
        raise ValueError("Q must be positive semidefinite")
    return Q, c


def _refine(Q, c, v, tol, max_rounds=None):
    """Active-set finish from a feasible ``v`` (Lawson-Hanson style).

    Minimizes over the current free set; if that leaves the orthant, moves
    toward it until a coordinate hits zero and frees that coordinate no
    more. Then frees the bound coordinate with the most negative gradient,
    if any. Every move goes toward a subspace minimizer, so the objective
    never increases. Returns the final point and the objective values of
    the accepted moves.
    """
    n = len(c)
    max_rounds = max_rounds or 3 * n + 10
    x = np.maximum(v, 0.0)
    free = x > 0
    trail = []
    for _ in range(max_rounds):
        # Newton step on the face, minimum-norm so singular faces stay near x
        z = np.where(free, x, 0.0)
        if free.any():
            grad = 2.0 * Q @ z + c
            step, *_ = np.linalg.lstsq(2.0 * Q[np.ix_(free, free)], -grad[free], rcond=None)
            z[free] += step
        blocked = free & (z <= 0)
        if blocked.any():
            ratios = x[blocked] / (x[blocked] - z[blocked])
            step = float(ratios.min())
            x = x + step * (z - x)
            hit = np.flatnonzero(blocked)[np.argmin(ratios)]
            x[hit] = 0.0
            x = np.maximum(x, 0.0)
            free = x > 0
            trail.append(objective(Q, c, x))
            continue
        x = z
        trail.append(objective(Q, c, x))
        grad = 2.0 * Q @ x + c
        bound = np.flatnonzero(~free)
        if bound.size == 0 or grad[bound].min() >= -tol:
            break
        free[bound[np.argmin(grad[bound])]] = True
    return x, trail


def solve_nqp(Q, c, max_iters: int = 10_000, tol: float | None = None) -> NqpResult:
    """Projected gradient descent with Barzilai-Borwein steps.

    Each BB trial point is projected onto the orthant and the move toward it
    is scaled by an exact line search, so the objective never increases
    beyond rounding (about 1e-14 relative). Once the free set settles (and
    every 10 iterations) an active-set pass tries to finish exactly, which
    rescues the flat, rank-deficient problems where BB crawls. Iterations run on the diagonally
    rescaled problem ``u = sqrt(diag Q) * v``, which leaves the orthant
    unchanged; convergence is always judged on the original problem.

    A singular ``Q`` needs ``c`` in its range for the minimum to be finite,
    which holds for GEM's dual (``Q = R'R``, ``c = 2R'g``).
    """
    Q, c = _validate(Q, c)
    if tol is None:
        tol = 1e-9 * (1.0 + np.linalg.norm(c))
    n = c.shape[0]
    history = [0.0]
    if n == 0:
        return NqpResult(np.zeros(0), 0, 0.0, 0.0, history)

    diag = np.diag(Q)
    scale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    Qs = Q * scale[:, None] * scale[None, :]
    cs = c * scale

    def converged(u):
        return kkt_residual(Q, c, u * scale, tol) <= tol

    def done(u, it, f):
        v = u * scale
        return NqpResult(v, it, kkt_residual(Q, c, v, tol), f, history)

    def slack(val):
        return 1e-14 * (1.0 + abs(val))

    def finish(u, f):
        cand, trail = _refine(Qs, cs, u, tol * scale.min())
        if not converged(cand):
            return None
        kept = []
        for val in trail:
            if val > (kept[-1] if kept else f) + slack(f):
                return None
            kept.append(val)
        history.extend(kept)
        return cand, kept[-1] if kept else f

    inf_norm = np.abs(Qs).sum(axis=1).max()
    fallback = 1.0 / (2.0 * inf_norm) if inf_norm > 0 else 1.0
    u = np.zeros(n)
    f = 0.0
    grad = cs.copy()
    prev_u = prev_grad = prev_free = None
    stalls = 0
    it = 0

    while it < max_iters:
        if converged(u):
            return done(u, it, f)
        it += 1

        step = fallback
        if prev_u is not None:
            s = u - prev_u
            sy = s @ (grad - prev_grad)
            if sy > 1e-300:
                step = (s @ s) / sy
        d = np.maximum(u - step * grad, 0.0) - u
        slope = grad @ d
        if slope >= 0 and step != fallback:
            # BB overshoot onto the bound; retry with the safe step
            d = np.maximum(u - fallback * grad, 0.0) - u
            slope = grad @ d
        if slope >= 0:
            break
        curv = 2.0 * (d @ Qs @ d)
        t = min(1.0, -slope / curv) if curv > 0 else 1.0
        u_new = np.maximum(u + t * d, 0.0)
        f_new = objective(Qs, cs, u_new)
        if f_new > f + slack(f):
            prev_u = prev_grad = None
            stalls += 1
            if stalls > 3:
                break
            continue
        prev_u, prev_grad = u, grad
        u, f = u_new, f_new
        grad = 2.0 * Qs @ u + cs
        history.append(f)

        free = u > 0
        if it % 10 == 0 or (prev_free is not None and np.array_equal(free, prev_free)):
            hit = finish(u, f)
            if hit is not None:
                return done(hit[0], it, hit[1])
        prev_free = free

    if converged(u):
        return done(u, it, f)
    hit = finish(u, f)
    if hit is not None:
        return done(hit[0], it, hit[1])
    raise NqpConvergenceError(kkt_residual(Q, c, u * scale, tol), it)
