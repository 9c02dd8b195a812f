"""Assembly of the key-rate SDP: constraints, Alice's marginal and the G map.

The joint state lives on ``A (x) B`` with ``A`` the 16-dimensional register of
Alice's labels and ``B`` the truncated Fock space.  Alice's marginal is the
Gram matrix of her weighted coherent states and is rank deficient in floating
point (its smallest eigenvalues sit near 1e-13), so the optimisation is posed
on the support of that marginal.  With ``rho_A' = diag(w)`` in its eigenbasis
``U`` and ``S = diag(sqrt(w))``, every feasible state is

    rho = (U S (x) I) J (S U^dag (x) I),   tr_B J = I_r,   J >= 0,

and the observable constraints become linear constraints on ``J``.  Working
with ``J`` keeps the interior-point linear algebra well conditioned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..constellation import N_STATES, Constellation
from ..estimation import StateStatistics
from ..fockspace import DetectorParams, KeyMapGeometry, key_map_regions, observable_operators
from .ipm import KronConstraints

RANK_TOL = 1e-12


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


def hermitian_basis(r: int) -> np.ndarray:
    """Orthonormal basis of r x r Hermitian matrices under ``Re tr(A B)``."""
    out = []
    for i in range(r):
        for j in range(i, r):
            E = np.zeros((r, r), complex)
            if i == j:
                E[i, i] = 1.0
                out.append(E)
                continue
            E[i, j] = E[j, i] = 1 / np.sqrt(2)
            out.append(E)
            E = np.zeros((r, r), complex)
            E[i, j], E[j, i] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            out.append(E)
    return np.array(out)


def alice_marginal(c: Constellation) -> np.ndarray:
    """``sum_ij sqrt(p_i p_j) <alpha_j|alpha_i> |i><j|``."""
    a, p = c.amplitudes, c.probabilities
    overlap = np.exp(-(np.abs(a)[:, None] ** 2 + np.abs(a)[None, :] ** 2) / 2
                     + np.conj(a)[None, :] * a[:, None])
    return np.sqrt(np.outer(p, p)) * overlap


@dataclass
class SdpProblem:
    """Constraint data of the key-rate optimisation over ``rho_AB``."""

    probabilities: np.ndarray
    targets: np.ndarray            # (16, 4): fq, fp, sq, sp per state
    observables: np.ndarray        # (4, d, d)
    alice_marginal: np.ndarray     # (16, 16)
    dim_A: int = N_STATES
    # reduced form, filled in __post_init__
    support: np.ndarray = field(init=False, repr=False)        # U, (16, r)
    support_weights: np.ndarray = field(init=False, repr=False)  # w, (r,)

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, float)
        self.targets = np.asarray(self.targets, float)
        self.observables = np.asarray(self.observables, complex)
        self.alice_marginal = np.asarray(self.alice_marginal, complex)
        if self.targets.shape != (self.dim_A, 4):
            raise ValueError("targets must have shape (16, 4)")
        if self.alice_marginal.shape != (self.dim_A, self.dim_A):
            raise ValueError("alice_marginal must be 16 x 16")
        if self.observables.ndim != 3 or self.observables.shape[1] != self.observables.shape[2]:
            raise ValueError("observables must be a stack of square matrices")
        w, V = np.linalg.eigh(self.alice_marginal)
        if w.min() < -1e-10:
            raise ValueError("alice_marginal is not positive semidefinite")
        keep = w > RANK_TOL * w.max()
        self.support = V[:, keep]
        self.support_weights = w[keep]

    @property
    def dim_B(self) -> int:
        return self.observables.shape[1]

    @property
    def rank(self) -> int:
        return len(self.support_weights)

    @property
    def n_constraints(self) -> int:
        """Observable constraints plus the real parameters of the marginal constraint."""
        return 4 * self.dim_A + self.dim_A**2

    def lift(self) -> np.ndarray:
        """``U S (x) I`` mapping the reduced variable ``J`` to ``rho``."""
        return np.kron(self.support * np.sqrt(self.support_weights), np.eye(self.dim_B))

    def rho_from_reduced(self, J: np.ndarray) -> np.ndarray:
        M = self.lift()
        return M @ J @ M.conj().T

    def reduced_constraints(self) -> tuple[KronConstraints, np.ndarray]:
        """Constraint map and right-hand side on the reduced variable ``J``."""
        r, d = self.rank, self.dim_B
        S = np.sqrt(self.support_weights)
        H = hermitian_basis(r)
        # rows of U are the reduced images of Alice's basis vectors
        u = self.support.conj()
        Q = np.einsum("i,xi,xj,j->xij", S, u, u.conj(), S)
        fams = [(np.eye(d), H)] + [(self.observables[k], Q) for k in range(4)]
        b = np.concatenate([np.einsum("kii->k", H).real]
                           + [self.probabilities * self.targets[:, k] for k in range(4)])
        return KronConstraints(fams, r, d), b

    def full_constraints(self) -> tuple[list[np.ndarray], np.ndarray]:
        """Explicit constraint operators on ``rho_AB`` (dense; for checking)."""
        d = self.dim_B
        mats, vals = [], []
        for k in range(4):
            for x in range(self.dim_A):
                P = np.zeros((self.dim_A, self.dim_A))
                P[x, x] = 1
                mats.append(np.kron(P, self.observables[k]))
                vals.append(self.probabilities[x] * self.targets[x, k])
        for E in hermitian_basis(self.dim_A):
            mats.append(np.kron(E, np.eye(d)))
            vals.append(np.trace(E @ self.alice_marginal).real)
        return mats, np.array(vals)

    def residuals(self, rho: np.ndarray) -> np.ndarray:
        """Constraint violations of a full ``rho_AB``."""
        mats, vals = self.full_constraints()
        return np.array([np.trace(M @ rho).real for M in mats]) - vals


def build_problem(stats: StateStatistics, c: Constellation, det: DetectorParams) -> SdpProblem:
    return SdpProblem(c.probabilities, stats.as_array(), np.array(observable_operators(det)),
                      alice_marginal(c))


@dataclass
class GMapSpec:
    """Square roots of the key-map region operators, ``K = sum_z |z> (x) I_A (x) sqrt(R_z)``."""

    regions: np.ndarray                 # (16, d, d)
    sqrt_regions: np.ndarray = field(init=False, repr=False)
    sqrt_total: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.regions = np.asarray(self.regions, complex)
        self.sqrt_regions = np.array([psd_sqrt(R) for R in self.regions])
        self.sqrt_total = psd_sqrt(self.regions.sum(axis=0))

    @property
    def dim_B(self) -> int:
        return self.regions.shape[1]

    def kraus(self, dim_A: int) -> np.ndarray:
        """The Kraus operator as a dense ``(16 dim_A d) x (dim_A d)`` matrix."""
        eye = np.eye(dim_A)
        return np.concatenate([np.kron(eye, S) for S in self.sqrt_regions], axis=0)

    def kraus_defect(self) -> float:
        """``lambda_max(sum_z R_z) - 1``; non-positive for a valid map."""
        return float(np.linalg.eigvalsh(self.regions.sum(axis=0)).max() - 1.0)


def build_gmap(geom: KeyMapGeometry, det: DetectorParams) -> GMapSpec:
    regions, _ = key_map_regions(geom, det)
    return GMapSpec(regions)
