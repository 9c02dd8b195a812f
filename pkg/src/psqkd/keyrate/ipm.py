"""Primal-dual interior-point solver for complex Hermitian linear SDPs.

Solves

    minimize  <C, X>   subject to  A(X) = b,  X >= 0

with ``<A, X> = Re tr(A X)`` for Hermitian ``A``, ``A(X)_i = <A_i, X>`` and
dual ``maximize b.y  s.t.  C - sum_i y_i A_i = Z >= 0``.  Infeasible-start
path following with the HKM search direction and Mehrotra predictor-corrector.

The constraint map is an object with ``apply(X)``, ``adjoint(y)`` and
``schur(X, W)`` (the matrix ``M_ij = Re tr(A_i X A_j W)``); structured maps
exploit Kronecker form to build ``M`` cheaply.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


def herm(M):
    return 0.5 * (M + M.conj().T)


def inner(A, B) -> float:
    """Real Frobenius inner product ``Re tr(A^dag B)``."""
    return float(np.vdot(A, B).real)


class DenseConstraints:
    """Constraint map from an explicit list of Hermitian matrices."""

    def __init__(self, mats):
        self.mats = np.asarray(mats, dtype=complex)
        self.m = len(self.mats)
        self.n = self.mats.shape[1]

    def apply(self, X):
        # Re tr(A X) = Re sum A_ij X_ji
        return np.einsum("kij,ji->k", self.mats, X).real

    def adjoint(self, y):
        return np.tensordot(y, self.mats, axes=1)

    def schur(self, X, W):
        prods = np.einsum("ij,kjl,lm->kim", X, self.mats, W)
        return np.einsum("aij,bji->ab", self.mats, prods).real


class KronConstraints:
    """Constraints ``<E_k (x) F, X>`` grouped in families sharing one B-side operator ``F``.

    ``families`` is a list of ``(F, E)`` with ``F`` of shape (d, d) and ``E`` a
    stack (K, r, r) of Hermitian A-side matrices.  The total space is A (x) B
    with dimension ``r * d``.
    """

    def __init__(self, families, r: int, d: int):
        self.families = [(np.asarray(F, dtype=complex), np.asarray(E, dtype=complex))
                         for F, E in families]
        self.r, self.d = r, d
        self.n = r * d
        self.sizes = [len(E) for _, E in self.families]
        self.m = int(sum(self.sizes))
        self._offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    def _split(self, y):
        return [y[self._offsets[i]:self._offsets[i + 1]] for i in range(len(self.families))]

    def _bside(self, X, F):
        """``B_F[q, p] = sum_{b,c} F[b, c] X[(q,c), (p,b)]``, i.e. tr over B of (I (x) F) X."""
        X4 = X.reshape(self.r, self.d, self.r, self.d)
        return np.einsum("bc,qcpb->qp", F, X4)

    def apply(self, X):
        out = []
        for F, E in self.families:
            BF = self._bside(X, F)
            out.append(np.einsum("kpq,qp->k", E, BF).real)
        return np.concatenate(out)

    def adjoint(self, y):
        S = np.zeros((self.n, self.n), dtype=complex)
        for (F, E), yk in zip(self.families, self._split(y)):
            S += np.kron(np.tensordot(yk, E, axes=1), F)
        return S

    def schur(self, X, W):
        r, d = self.r, self.d
        W4 = W.reshape(r, d, r, d)
        eye_d = np.eye(d)
        left = []
        for F, _ in self.families:
            left.append(X if np.allclose(F, eye_d) else np.kron(np.eye(r), F) @ X)
        M = np.zeros((self.m, self.m))
        o = self._offsets
        for i, (Fi, Ei) in enumerate(self.families):
            Ei_flat = Ei.reshape(len(Ei), -1)            # index (p, q)
            for j in range(i, len(self.families)):
                Fj, Ej = self.families[j]
                Y = left[i] if np.allclose(Fj, eye_d) else left[i] @ np.kron(np.eye(r), Fj)
                Y4 = Y.reshape(r, d, r, d)
                # T[(p,q),(r,s)] = sum_{b,c} Y[(q,b),(r,c)] W[(s,c),(p,b)]
                T = np.einsum("qbrc,scpb->pqrs", Y4, W4).reshape(r * r, r * r)
                Ej_flat = Ej.reshape(len(Ej), -1)
                blk = (Ei_flat @ T @ Ej_flat.T).real
                M[o[i]:o[i + 1], o[j]:o[j + 1]] = blk
                if j != i:
                    M[o[j]:o[j + 1], o[i]:o[i + 1]] = blk.T
        return 0.5 * (M + M.T)


@dataclass
class SdpResult:
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    primal: float
    dual: float
    status: str
    iterations: int
    primal_infeasibility: float
    dual_infeasibility: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual


class SdpError(RuntimeError):
    pass


def _max_step(X, dX, L=None):
    """Largest ``t <= 1`` keeping ``X + t dX`` positive semidefinite (exact, via Cholesky of X)."""
    if not np.all(np.isfinite(dX)):
        raise ValueError("non-finite search direction")
    if L is None:
        L = np.linalg.cholesky(X)
    Li = sla.solve_triangular(L, np.eye(len(L)), lower=True)
    lam = np.linalg.eigvalsh(herm(Li @ dX @ Li.conj().T)).min()
    return np.inf if lam >= 0 else -1.0 / lam


def solve_sdp(C, cons, b, tol: float = 1e-9, max_iter: int = 100, X0=None,
              step_fraction: float = 0.98, verbose: bool = False) -> SdpResult:
    """Solve the linear SDP ``min <C,X> s.t. cons.apply(X) = b, X >= 0``."""
    C = herm(np.asarray(C, dtype=complex))
    b = np.asarray(b, dtype=float)
    n = cons.n
    nb = 1 + np.linalg.norm(b)
    nc = 1 + np.linalg.norm(C)
    scale = max(1.0, nb, nc) / np.sqrt(n)
    X = herm(X0) if X0 is not None else scale * np.eye(n, dtype=complex)
    Z = scale * np.eye(n, dtype=complex)
    y = np.zeros(cons.m)
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        Rp = b - cons.apply(X)
        Rd = herm(C - cons.adjoint(y) - Z)
        mu = inner(X, Z) / n
        pobj, dobj = inner(C, X), float(b @ y)
        pinf = np.linalg.norm(Rp) / nb
        dinf = np.linalg.norm(Rd) / nc
        rgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if verbose:
            log.info("it %3d  p=% .10e d=% .10e gap=%.2e pinf=%.2e dinf=%.2e mu=%.2e",
                     it, pobj, dobj, rgap, pinf, dinf, mu)
        if pinf < tol and dinf < tol and rgap < tol:
            status = "optimal"
            break
        try:
            LZ = np.linalg.cholesky(Z)
            LX = np.linalg.cholesky(X)
        except np.linalg.LinAlgError as exc:
            status = "numerical_error"
            log.debug("cholesky failed at iteration %d: %s", it, exc)
            break
        LZi = sla.solve_triangular(LZ, np.eye(n), lower=True)
        W = LZi.conj().T @ LZi                      # Z^{-1}
        M = cons.schur(X, W)
        try:
            cho = sla.cho_factor(M)
        except np.linalg.LinAlgError:
            M += 1e-14 * np.trace(M) / len(M) * np.eye(len(M))
            try:
                cho = sla.cho_factor(M)
            except np.linalg.LinAlgError:
                status = "numerical_error"
                break
        XRdW = X @ Rd @ W

        def direction(H):
            rhs = Rp - cons.apply(H - XRdW)
            dy = sla.cho_solve(cho, rhs)
            dZ = herm(Rd - cons.adjoint(dy))
            dX = herm(H - X @ dZ @ W)
            return dX, dy, dZ

        try:
            # predictor
            dXa, dya, dZa = direction(-X)
            ap = min(1.0, step_fraction * _max_step(X, dXa, LX))
            ad = min(1.0, step_fraction * _max_step(Z, dZa, LZ))
            mu_aff = inner(X + ap * dXa, Z + ad * dZa) / n
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            # corrector
            H = sigma * mu * W - X - dXa @ dZa @ W
            dX, dy, dZ = direction(H)
            ap = min(1.0, step_fraction * _max_step(X, dX, LX))
            ad = min(1.0, step_fraction * _max_step(Z, dZ, LZ))
        except (np.linalg.LinAlgError, ValueError) as exc:
            # non-finite directions: typically iterates diverging on an infeasible problem
            status = "numerical_error"
            log.debug("step computation failed at iteration %d: %s", it, exc)
            break
        X = herm(X + ap * dX)
        y = y + ad * dy
        Z = herm(Z + ad * dZ)
    Rp = b - cons.apply(X)
    Rd = herm(C - cons.adjoint(y) - Z)
    return SdpResult(X, y, Z, inner(C, X), float(b @ y), status, it,
                     float(np.linalg.norm(Rp) / nb), float(np.linalg.norm(Rd) / nc))
