"""Certified minimisation of the relative-entropy objective.

Frank-Wolfe on the reduced variable ``J``: at each iterate the linearised
problem ``min <grad f(J), S>`` over the constraint set is solved by the
interior-point method in :mod:`.ipm`, and its dual gives a certified lower
bound valid for any dual vector ``y``,

    f* >= f(J) - <grad, J> + b.y + r * lambda_min(grad - A^*(y)),

because every feasible ``S`` has trace ``r``.  The primal step is
fully corrective: after adding the new vertex, the weights over all retained
vertices are re-optimised on the simplex, which converges much faster than the
plain line-search update near the boundary of the cone.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .ipm import herm, inner, solve_sdp
from .objective import DEFAULT_EPS, reduced_objective
from .problem import GMapSpec, SdpProblem

log = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """The constraint set is empty (to solver precision)."""

    def __init__(self, message: str, max_violation: float):
        super().__init__(f"{message} (max constraint violation {max_violation:.3e})")
        self.max_violation = max_violation


@dataclass
class SolveResult:
    lower_bound: float
    feasible_value: float
    rho: np.ndarray
    J: np.ndarray
    iterations: int
    converged: bool
    eps: float
    max_violation: float
    history: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def gap(self) -> float:
        return self.feasible_value - self.lower_bound


def find_feasible(problem: SdpProblem, tol: float = 1e-9, max_violation: float = 1e-6):
    """Interior feasible point of the reduced constraint set.

    Solves the SDP with zero cost, whose central path ends near the analytic
    centre.  Raises :class:`InfeasibleError` when the residual stays above
    ``max_violation``.
    """
    cons, b = problem.reduced_constraints()
    if np.any(problem.targets[:, 2] < problem.targets[:, 0] ** 2) or \
            np.any(problem.targets[:, 3] < problem.targets[:, 1] ** 2):
        viol = max(np.max(problem.targets[:, 0] ** 2 - problem.targets[:, 2]),
                   np.max(problem.targets[:, 1] ** 2 - problem.targets[:, 3]))
        raise InfeasibleError("second moments below squared first moments", float(viol))
    res = solve_sdp(np.zeros((cons.n, cons.n)), cons, b, tol=tol)
    if not np.all(np.isfinite(res.X)):
        raise InfeasibleError("no state satisfies the constraints (interior-point iterates diverged)",
                              float("inf"))
    viol = float(np.max(np.abs(cons.apply(res.X) - b)))
    if viol > max_violation or np.linalg.eigvalsh(res.X).min() < -1e-10:
        raise InfeasibleError("no state satisfies the constraints", viol)
    return res.X, cons, b


def _simplex_qp(g, H, w):
    """Minimise ``g.s + s.H.s / 2`` subject to ``w + s`` on the probability simplex."""
    k = len(w)

    def fun(s):
        Hs = H @ s
        return g @ s + 0.5 * s @ Hs, g + Hs

    with warnings.catch_warnings():
        # SLSQP clips its trial points back into the bounds; the clipped point is what we want
        warnings.filterwarnings("ignore", message="Values in x were outside bounds")
        res = minimize(fun, np.zeros(k), jac=True, method="SLSQP",
                       bounds=[(-wi, 1.0 - wi) for wi in w],
                       constraints=[{"type": "eq", "fun": lambda s: s.sum(), "jac": lambda s: np.ones(k)}],
                       options={"ftol": 1e-18, "maxiter": 500})
    return res.x, res.fun


def _reoptimise_weights(f, atoms, w, max_steps: int = 25, tol: float = 1e-14):
    """Projected Newton on the weights of ``f(sum_i w_i atoms_i)`` over the simplex."""
    A = np.asarray(atoms)
    J = np.tensordot(w, A, axes=1)
    val, G = f(J)
    for _ in range(max_steps):
        g = np.einsum("kij,ij->k", A.conj(), G).real
        HA = f.hvp(J, A)
        H = np.array([[np.vdot(a, h).real for h in HA] for a in A])
        H = 0.5 * (H + H.T) + 1e-12 * max(np.trace(H), 1e-300) * np.eye(len(w))
        step, predicted = _simplex_qp(g, H, w)
        if predicted > -tol:
            break
        D = np.tensordot(step, A, axes=1)
        ls = minimize_scalar(lambda t: f.value(J + t * D), bounds=(0.0, 1.0), method="bounded",
                             options={"xatol": 1e-10})
        if ls.fun >= val - tol:
            break
        w = np.clip(w + ls.x * step, 0.0, None)
        w /= w.sum()
        J = np.tensordot(w, A, axes=1)
        val, G = f(J)
    return w


def solve(problem: SdpProblem, gmap: GMapSpec, tol_gap: float = 1e-5, max_iter: int = 60,
          eps: float = DEFAULT_EPS, ipm_tol: float = 1e-10, fully_corrective: bool = True,
          time_limit: float | None = None) -> SolveResult:
    """Certified lower bound on ``min D(G(rho) || Z(G(rho)))`` over the constraint set.

    Returns the best lower bound seen and the objective at the final iterate.
    ``converged`` is False when ``max_iter`` or ``time_limit`` ran out first.
    """
    if gmap.dim_B != problem.dim_B:
        raise ValueError("G map and problem use different Fock dimensions")
    t0 = time.perf_counter()
    J, cons, b = find_feasible(problem)
    r = problem.rank
    f = reduced_objective(problem, gmap, eps)
    atoms, w = [J], np.array([1.0])
    best_lb = -np.inf
    history = []
    converged = False
    it = 0
    val, G = f(J)
    for it in range(1, max_iter + 1):
        sub = solve_sdp(G, cons, b, tol=ipm_tol)
        if not (np.all(np.isfinite(sub.y)) and np.all(np.isfinite(sub.X))):
            log.warning("linearised subproblem returned non-finite iterates; stopping")
            break
        Z = herm(G - cons.adjoint(sub.y))
        lb = val - inner(G, J) + float(b @ sub.y) + r * np.linalg.eigvalsh(Z).min()
        if lb > val:
            # Only possible when the constraints are met to tolerance but not exactly
            # (nearly empty set, dual blows up); lowering a lower bound stays valid.
            log.warning("dual bound %.6g exceeds objective %.6g; constraint set is nearly "
                        "empty at this cutoff", lb, val)
            lb = val
        best_lb = max(best_lb, lb)
        history.append((val, lb))
        log.info("iter %3d  f=%.10f  lb=%.10f  gap=%.3e  atoms=%d  ipm=%s/%d",
                 it, val, lb, val - best_lb, len(atoms), sub.status, sub.iterations)
        if val - best_lb <= tol_gap:
            converged = True
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break
        S = herm(sub.X)
        D = S - J
        ls = minimize_scalar(lambda t: f.value(J + t * D), bounds=(0.0, 1.0), method="bounded",
                             options={"xatol": 1e-12})
        t = ls.x if ls.fun <= val else 0.0
        atoms.append(S)
        w = np.append((1 - t) * w, t)
        if fully_corrective:
            w = _reoptimise_weights(f, atoms, w)
            keep = w > 1e-12
            atoms = [a for a, k in zip(atoms, keep) if k]
            w = w[keep] / w[keep].sum()
        J = np.tensordot(w, np.asarray(atoms), axes=1)
        val, G = f(J)
    viol = float(np.max(np.abs(cons.apply(J) - b)))
    return SolveResult(best_lb, val, problem.rho_from_reduced(J), J, it, converged, eps, viol,
                       history, time.perf_counter() - t0)
