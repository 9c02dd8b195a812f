"""Fock-basis operators for a heterodyne receiver with trusted detector noise.

The noisy heterodyne POVM density is

    G(zeta) = D(zeta/sqrt(eta)) rho_th(nbar) D(zeta/sqrt(eta))^dag / (pi eta),
    nbar = (1 - eta + nu_el) / eta,

with ``zeta = x + i y`` in natural units.  Integrating ``G`` over an
axis-aligned rectangle gives a region operator; its Fock matrix elements are
a Gaussian-weighted polynomial in ``(x, y)``, so each entry reduces to sums of
products of one-dimensional truncated Gaussian moments, evaluated here with
regularized incomplete gamma functions.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.special import comb, gamma, gammainc, gammaincc, gammaln

INF = np.inf


@dataclass(frozen=True)
class DetectorParams:
    eta_d: float = 0.714
    nu_el: float = 0.064
    n_cutoff: int = 12

    def __post_init__(self):
        if not 0 < self.eta_d <= 1:
            raise ValueError("eta_d must lie in (0, 1]")
        if self.nu_el < 0:
            raise ValueError("nu_el must be non-negative")
        if self.n_cutoff < 1:
            raise ValueError("n_cutoff must be >= 1")

    @property
    def dim(self) -> int:
        return self.n_cutoff + 1

    @property
    def nbar(self) -> float:
        """Mean photon number of the equivalent thermal detector noise."""
        return (1.0 - self.eta_d + self.nu_el) / self.eta_d


@dataclass(frozen=True)
class KeyMapGeometry:
    """Rectangular key map: grid lines at 0 and +-2*alpha0, axis strips of half-width delta."""
    alpha0: float
    delta: float = 0.0
    detection_limit: float = INF

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.delta >= 2 * self.alpha0:
            raise ValueError("delta must be smaller than 2*alpha0")
        if self.detection_limit <= 2 * self.alpha0:
            raise ValueError("detection_limit must exceed the outer grid line")

    @classmethod
    def at_receiver(cls, scale: float, transmittance: float, eta_d: float,
                    delta0: float = 0.0, detection_limit: float = INF) -> "KeyMapGeometry":
        """Map Alice-side grid scale and post-selection width to Bob's outcome plane."""
        g = np.sqrt(transmittance * eta_d)
        return cls(g * scale, g * delta0, detection_limit)

    def intervals(self) -> list[tuple[float, float]]:
        """Per-axis intervals for column/row index 0..3 (levels +3, +1, -1, -3)."""
        a2, d, lim = 2 * self.alpha0, self.delta, self.detection_limit
        return [(a2, lim), (d, a2), (-a2, -d), (-lim, -a2)]

    def rectangles(self) -> list[tuple[float, float, float, float]]:
        """``(xlow, xup, ylow, yup)`` for regions z = 0..15 (z = 4*row + col)."""
        iv = self.intervals()
        return [iv[z % 4] + iv[z // 4] for z in range(16)]


# ---------------------------------------------------------------------------
# elementary states and ladder operators


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def coherent_state(alpha: complex, params: DetectorParams | int, warn_tol: float = 1e-6) -> np.ndarray:
    """Truncated Fock amplitudes ``exp(-|alpha|^2/2) alpha^n / sqrt(n!)``."""
    dim = params.dim if isinstance(params, DetectorParams) else int(params)
    n = np.arange(dim)
    alpha = complex(alpha)
    with np.errstate(divide="ignore"):
        logmag = n * np.log(abs(alpha)) if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    vec = np.exp(-abs(alpha) ** 2 / 2 + logmag - 0.5 * gammaln(n + 1)) * np.exp(1j * np.angle(alpha) * n)
    deficit = 1.0 - np.vdot(vec, vec).real
    if deficit > warn_tol:
        warnings.warn(f"coherent state |{alpha}> truncated at dim {dim}: norm deficit {deficit:.2e}",
                      stacklevel=2)
    return vec


def coherent_overlap(alpha: complex, beta: complex) -> complex:
    """Closed form ``<alpha|beta>``."""
    return np.exp(-(abs(alpha) ** 2 + abs(beta) ** 2) / 2 + np.conj(alpha) * beta)


def thermal_state(nbar: float, dim: int) -> np.ndarray:
    n = np.arange(dim)
    if nbar == 0:
        return np.diag((n == 0).astype(float)).astype(complex)
    p = (nbar / (1 + nbar)) ** n / (1 + nbar)
    return np.diag(p).astype(complex)


def displacement(beta: complex, dim: int, pad: int = 40) -> np.ndarray:
    """Truncated ``D(beta)``: exponentiated in a larger space, then cropped."""
    big = dim + pad
    a = annihilation(big)
    return expm(beta * a.conj().T - np.conj(beta) * a)[:dim, :dim]


def displaced_thermal_state(beta: complex, nbar: float, dim: int) -> np.ndarray:
    """``D(beta) rho_th(nbar) D(beta)^dag`` in the first ``dim`` Fock levels."""
    pad = 40
    D = displacement(beta, dim + pad, pad)
    rho = D @ thermal_state(nbar, dim + pad) @ D.conj().T
    return rho[:dim, :dim]


# ---------------------------------------------------------------------------
# region operators


def gaussian_moments(lo: float, hi: float, a: float, pmax: int) -> np.ndarray:
    """``[int_lo^hi x^p exp(-a x^2) dx for p in 0..pmax]``."""
    out = np.zeros(pmax + 1)
    if hi <= lo:
        return out
    if lo < 0 < hi:
        return gaussian_moments(lo, 0.0, a, pmax) + gaussian_moments(0.0, hi, a, pmax)
    p = np.arange(pmax + 1)
    sign = 1.0
    if hi <= 0:
        # mirror onto the positive half-line: x -> -x
        lo, hi = -hi, -lo
        sign = (-1.0) ** p
    h = (p + 1) / 2.0
    scale = 0.5 * gamma(h) * a ** (-h)
    tl, th = a * lo * lo, a * hi * hi
    if tl > 1.0:
        # both limits in the tail: difference of upper incomplete gammas
        upper = 0.0 if np.isinf(th) else gammaincc(h, th)
        val = gammaincc(h, tl) - upper
    else:
        upper = np.ones_like(h) if np.isinf(th) else gammainc(h, th)
        val = upper - gammainc(h, tl)
    return sign * scale * val


@lru_cache(maxsize=32)
def _region_polynomials(eta_d: float, nu_el: float, dim: int):
    """Coefficient tensor ``P[n, m, p, q]`` (n <= m) of x^p y^q, plus the Gaussian rate ``a``.

    ``<n|G(x+iy)|m> = exp(-a (x^2+y^2)) * sum_pq P[n,m,p,q] x^p y^q``.
    """
    nbar = (1.0 - eta_d + nu_el) / eta_d
    a = 1.0 / (eta_d * (1.0 + nbar))
    deg = 2 * (dim - 1)
    P = np.zeros((dim, dim, deg + 1, deg + 1), dtype=complex)
    for n in range(dim):
        for m in range(n, dim):
            k = m - n
            # nbar^n L_n^k(-r^2/b) as a polynomial in r^2 without dividing by nbar
            c_j = np.array([comb(n + k, n - j) * nbar ** (n - j) / (eta_d * (1 + nbar)) ** j
                            / np.exp(gammaln(j + 1)) for j in range(n + 1)])
            pref = np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1))) / (
                np.pi * eta_d ** (k / 2 + 1) * (1 + nbar) ** (m + 1))
            # (x - i y)^k
            xy = np.zeros((k + 1, k + 1), dtype=complex)
            for l in range(k + 1):
                xy[k - l, l] = comb(k, l) * (-1j) ** l
            # r^{2j} = sum_i C(j,i) x^{2i} y^{2(j-i)}
            for j, cj in enumerate(c_j):
                for i in range(j + 1):
                    P[n, m, 2 * i:2 * i + k + 1, 2 * (j - i):2 * (j - i) + k + 1] += \
                        pref * cj * comb(j, i) * xy
    return P, a


def region_operator(xlow: float, xup: float, ylow: float, yup: float,
                    params: DetectorParams) -> np.ndarray:
    """Integral of the noisy heterodyne POVM density over a rectangle, in the Fock basis."""
    if not (xlow < xup and ylow < yup):
        raise ValueError("rectangle limits must satisfy xlow < xup and ylow < yup")
    P, a = _region_polynomials(float(params.eta_d), float(params.nu_el), params.dim)
    deg = P.shape[-1] - 1
    mx = gaussian_moments(xlow, xup, a, deg)
    my = gaussian_moments(ylow, yup, a, deg)
    upper = np.einsum("nmpq,p,q->nm", P, mx, my)
    R = np.triu(upper) + np.triu(upper, 1).conj().T
    return R


def key_map_regions(geom: KeyMapGeometry, params: DetectorParams) -> tuple[np.ndarray, np.ndarray]:
    """The 16 region operators (stacked, shape (16, dim, dim)) and the discard operator.

    The discard operator is ``I - sum_z R_z``.
    """
    regions = np.array([region_operator(*rect, params) for rect in geom.rectangles()])
    discard = np.eye(params.dim) - regions.sum(axis=0)
    return regions, 0.5 * (discard + discard.conj().T)


def discard_operator(geom: KeyMapGeometry, params: DetectorParams) -> np.ndarray:
    """Discard operator integrated directly over the axis strips and beyond the detection limit.

    Independent of ``key_map_regions``; the two routes agree up to roundoff.
    """
    d, lim = geom.delta, geom.detection_limit
    full = (-INF, INF)
    R = np.zeros((params.dim, params.dim), dtype=complex)
    if d > 0:
        # cross of two strips by inclusion-exclusion, restricted to the detection box
        box = (-lim, lim) if np.isfinite(lim) else full
        R += region_operator(-d, d, *box, params)
        R += region_operator(*box, -d, d, params)
        R -= region_operator(-d, d, -d, d, params)
    if np.isfinite(lim):
        R += np.eye(params.dim) - region_operator(-lim, lim, -lim, lim, params)
    return R


def observable_operators(params: DetectorParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """First and second quadrature moments of the noisy heterodyne outcome, as operators.

    ``F_Q = int sqrt(2) x G``, ``F_P = int sqrt(2) y G``, ``S_Q = int 2 x^2 G``,
    ``S_P = int 2 y^2 G``.  With ``a`` the annihilation operator these are
    ``sqrt(eta/2)(a + a^dag)``, ``-i sqrt(eta/2)(a - a^dag)`` and
    ``eta (n +- (a^2 + a^dag^2)/2) + (1 + nu_el) I``.
    """
    dim, eta = params.dim, params.eta_d
    a = annihilation(dim)
    ad = a.conj().T
    a2 = np.diag(np.sqrt(np.arange(1, dim - 1) * np.arange(2, dim)), 2).astype(complex)
    n = number_operator(dim)
    F_Q = np.sqrt(eta / 2) * (a + ad)
    F_P = -1j * np.sqrt(eta / 2) * (a - ad)
    sq = (a2 + a2.conj().T) / 2
    base = (1 + params.nu_el) * np.eye(dim)
    S_Q = eta * (n + sq) + base
    S_P = eta * (n - sq) + base
    return F_Q, F_P, S_Q, S_P


def observables_by_quadrature(params: DetectorParams, n_grid: int = 120,
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Numerical route to ``observable_operators``: Gauss-Hermite integration of the moments.

    Uses the same polynomial expansion of ``<n|G|m>`` but integrates ``x``, ``x^2``
    weights on a Gauss-Hermite grid instead of using closed forms.
    """
    P, a = _region_polynomials(float(params.eta_d), float(params.nu_el), params.dim)
    deg = P.shape[-1] - 1
    t, w = np.polynomial.hermite.hermgauss(n_grid)
    x = t / np.sqrt(a)
    w = w / np.sqrt(a)
    pw = x[None, :] ** np.arange(deg + 3)[:, None]
    mom = pw @ w                    # int x^p exp(-a x^2)
    m0 = mom[: deg + 1]
    m1 = mom[1: deg + 2]
    m2 = mom[2: deg + 3]

    def integrate(mx, my):
        upper = np.einsum("nmpq,p,q->nm", P, mx, my)
        return np.triu(upper) + np.triu(upper, 1).conj().T

    s2 = np.sqrt(2.0)
    return (s2 * integrate(m1, m0), s2 * integrate(m0, m1),
            2 * integrate(m2, m0), 2 * integrate(m0, m2))


# ---------------------------------------------------------------------------
# binary matrix export


def save_operator(path: str | Path, op: np.ndarray) -> None:
    """Write ``op`` as ``uint32 dim`` followed by row-major little-endian complex128 entries."""
    op = np.ascontiguousarray(op, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", op.shape[0]))
        fh.write(op.tobytes())


def load_operator(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (dim,) = struct.unpack("<I", raw[:4])
    body = raw[4:]
    if len(body) != dim * dim * 16:
        raise ValueError(f"{path}: expected {dim * dim * 16} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<c16").reshape(dim, dim).copy()
