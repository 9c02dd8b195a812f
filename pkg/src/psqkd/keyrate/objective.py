"""The relative-entropy objective ``D(G(rho) || Z(G(rho)))`` and its gradient.

``G(rho) = K rho K^dag`` has the same non-zero spectrum as
``(I (x) sqrt(sum_z R_z)) rho (I (x) sqrt(sum_z R_z))`` and the pinched blocks
are ``(I (x) sqrt(R_z)) rho (I (x) sqrt(R_z))``, so everything is evaluated on
``A (x) B`` without forming the 16-fold enlarged register.  Eigenvalues are
perturbed as ``lambda -> (1 - eps) lambda + eps / D`` with ``D`` the full output
dimension ``16 * dim_A * dim_B`` (zero eigenvalues that are never computed
explicitly are accounted for in closed form), and logarithms are base 2.
"""
from __future__ import annotations

import numpy as np

from .problem import GMapSpec, SdpProblem

LN2 = np.log(2.0)
DEFAULT_EPS = 1e-9


def _blocks(X, r, d):
    return X.reshape(r, d, r, d).transpose(0, 2, 1, 3)


def _unblocks(Xb, r, d):
    return Xb.transpose(0, 2, 1, 3).reshape(r * d, r * d)


class RelativeEntropy:
    """Objective on ``rho`` of shape ``(r d, r d)``; ``r`` need not equal the full ``dim_A``.

    ``pre`` (optional, ``r x r``) maps a reduced variable ``J`` to
    ``rho = (pre (x) I) J (pre (x) I)^dag``; gradients are pulled back through it.
    """

    def __init__(self, gmap: GMapSpec, r: int, out_dim: int, eps: float = DEFAULT_EPS,
                 pre: np.ndarray | None = None):
        self.gmap = gmap
        self.r = r
        self.d = gmap.dim_B
        self.n = r * self.d
        self.out_dim = out_dim
        self.eps = eps
        self.pre = None if pre is None else np.asarray(pre, complex)
        c = eps / out_dim
        # zero eigenvalues of G(rho) not matched by zero eigenvalues of Z(G(rho))
        self._const = (len(gmap.regions) - 1) * self.n * c * np.log(c) if eps > 0 else 0.0

    def _to_rho(self, X):
        if self.pre is None:
            return X
        P = self.pre
        Xb = _blocks(X, self.r, self.d)
        Xb = np.einsum("ia,abkl,jb->ijkl", P, Xb, P.conj())
        return _unblocks(Xb, self.r, self.d)

    def _from_rho_gradient(self, G):
        if self.pre is None:
            return G
        P = self.pre
        Gb = _blocks(G, self.r, self.d)
        Gb = np.einsum("ai,abkl,bj->ijkl", P.conj(), Gb, P)
        return _unblocks(Gb, self.r, self.d)

    def _sandwich(self, rho_blocks, B):
        return _unblocks(B @ rho_blocks @ B.conj().T, self.r, self.d)

    def _perturb(self, w):
        return (1 - self.eps) * w + self.eps / self.out_dim

    def _entropy_term(self, M, grad):
        if not grad:
            w = self._perturb(np.linalg.eigvalsh(M))
            return float(np.sum(w * np.log(w))), None
        w, V = np.linalg.eigh(M)
        w = self._perturb(w)
        return float(np.sum(w * np.log(w))), (V * np.log(w)) @ V.conj().T

    def hvp(self, X, directions) -> list[np.ndarray]:
        """Hessian of the objective at ``X`` applied to each of ``directions``.

        Uses the divided-difference formula for the derivative of the matrix
        logarithm in the eigenbasis of each perturbed block.
        """
        X = 0.5 * (X + X.conj().T)
        rb = _blocks(self._to_rho(X), self.r, self.d)
        terms = [(self.gmap.sqrt_total, 1.0)] + [(B, -1.0) for B in self.gmap.sqrt_regions]
        eig = []
        for B, sign in terms:
            w, V = np.linalg.eigh(self._sandwich(rb, B))
            w = self._perturb(w)
            lw = np.log(w)
            dw = w[:, None] - w[None, :]
            close = np.abs(dw) <= 1e-12 * np.maximum(w[:, None], w[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                gam = np.where(close, 2.0 / (w[:, None] + w[None, :]), (lw[:, None] - lw[None, :]) / dw)
            eig.append((B, sign, V, gam))
        scale = (1 - self.eps) ** 2 / LN2
        out = []
        for D in directions:
            db = _blocks(self._to_rho(0.5 * (D + D.conj().T)), self.r, self.d)
            H = np.zeros((self.n, self.n), complex)
            for B, sign, V, gam in eig:
                Y = V.conj().T @ self._sandwich(db, B) @ V
                L = V @ (gam * Y) @ V.conj().T
                H += sign * self._sandwich(_blocks(L, self.r, self.d), B)
            H = scale * 0.5 * (H + H.conj().T)
            out.append(self._from_rho_gradient(H))
        return out

    def value(self, X) -> float:
        return self(X, grad=False)[0]

    def __call__(self, X, grad: bool = True):
        X = 0.5 * (X + X.conj().T)
        rho = self._to_rho(X)
        rb = _blocks(rho, self.r, self.d)
        v, L = self._entropy_term(self._sandwich(rb, self.gmap.sqrt_total), grad)
        total = v + self._const
        G = None
        if grad:
            G = self._sandwich(_blocks(L, self.r, self.d), self.gmap.sqrt_total)
        for B in self.gmap.sqrt_regions:
            v, L = self._entropy_term(self._sandwich(rb, B), grad)
            total -= v
            if grad:
                G -= self._sandwich(_blocks(L, self.r, self.d), B)
        total /= LN2
        if grad:
            G = (1 - self.eps) * 0.5 * (G + G.conj().T) / LN2
            G = self._from_rho_gradient(G)
        return total, G


def objective(rho: np.ndarray, gmap: GMapSpec, eps: float = DEFAULT_EPS) -> tuple[float, np.ndarray]:
    """Value (bits) and gradient of the objective at a full ``rho_AB``.

    ``rho`` must be positive semidefinite with unit trace.
    """
    rho = np.asarray(rho, complex)
    d = gmap.dim_B
    if rho.shape[0] % d or rho.shape[0] != rho.shape[1]:
        raise ValueError("rho dimension is not a multiple of the Fock dimension")
    h = 0.5 * (rho + rho.conj().T)
    lam = np.linalg.eigvalsh(h)
    scale = max(1.0, float(np.abs(lam).max()))
    if lam.min() < -1e-9 * scale:
        raise ValueError(f"rho is not positive semidefinite (min eigenvalue {lam.min():.3e})")
    if abs(np.trace(h).real - 1) > 1e-8:
        raise ValueError("rho must have unit trace")
    r = rho.shape[0] // d
    f = RelativeEntropy(gmap, r, len(gmap.regions) * r * d, eps)
    return f(h)


def reduced_objective(problem: SdpProblem, gmap: GMapSpec, eps: float = DEFAULT_EPS) -> RelativeEntropy:
    """Objective as a function of the reduced variable ``J`` of ``problem``."""
    S = np.diag(np.sqrt(problem.support_weights)).astype(complex)
    out_dim = len(gmap.regions) * problem.dim_A * gmap.dim_B
    return RelativeEntropy(gmap, problem.rank, out_dim, eps, pre=S)
