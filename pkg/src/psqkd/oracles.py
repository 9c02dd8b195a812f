"""Brute-force reference computations used to cross-check the production routes.

Each oracle reaches its answer by a different path from the library code it
checks:

* :func:`povm_quadrature` integrates displaced thermal operators (built by
  matrix exponentials) on a Gauss-Legendre grid instead of using the closed
  polynomial/incomplete-gamma expansion;
* :func:`heterodyne_monte_carlo` samples each physical noise source in turn
  (thermal displacement, vacuum, detector loss, electronics) rather than the
  single lumped Gaussian;
* :func:`finite_difference_gradient` differentiates a scalar function by
  central differences;
* :func:`sample_from_table` draws ``(x, z)`` pairs from a conditional table;
* :func:`sampled_statistics` draws the per-state empirical moments of ``n``
  Gaussian-channel uses from their exact sampling distribution, so sample
  counts far beyond what fits in memory can be studied.
"""
from __future__ import annotations

import numpy as np

from .constellation import Constellation
from .estimation import StateStatistics, gaussian_statistics
from .fockspace import DetectorParams, annihilation, thermal_state

ORACLES = ("povm-quadrature", "channel", "gradient", "erf-table")


def _legendre(lo: float, hi: float, n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * t + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def povm_quadrature(rect, det: DetectorParams, n_grid: int = 24, clip: float = 7.0,
                    pieces: int = 4) -> np.ndarray:
    """Region operator by direct 2-D quadrature of the noisy heterodyne density.

    ``rect = (xlow, xup, ylow, yup)`` in natural units; infinite limits are
    clipped at ``+-clip`` where the density is negligible for low photon numbers.
    Each axis is split into ``pieces`` Gauss-Legendre panels.  Displacements
    come from one eigendecomposition of ``a^dag - a`` in a Fock space padded
    well beyond the largest displacement.
    """
    eta, nu = det.eta_d, det.nu_el
    nbar = (1 - eta + nu) / eta
    dim = det.dim
    lims = [float(np.clip(v, -clip, clip)) for v in rect]
    r_max = np.hypot(max(abs(lims[0]), abs(lims[1])), max(abs(lims[2]), abs(lims[3]))) / np.sqrt(eta)
    big = dim + int(2 * r_max ** 2 + 12 * r_max + 40)
    th = np.diag(thermal_state(nbar, big)).real
    gen = annihilation(big).T - annihilation(big)       # a^dag - a, real antisymmetric
    lam, V = np.linalg.eigh(1j * gen)                   # gen = -i V diag(lam) V^dag
    n_idx = np.arange(big)

    def nodes(lo, hi):
        edges = np.linspace(lo, hi, pieces + 1)
        pts = [_legendre(a, b, n_grid) for a, b in zip(edges[:-1], edges[1:])]
        return np.concatenate([p[0] for p in pts]), np.concatenate([p[1] for p in pts])

    xs, wx = nodes(lims[0], lims[1])
    ys, wy = nodes(lims[2], lims[3])
    Vd = V[:dim]
    R = np.zeros((dim, dim), complex)
    for x, ax in zip(xs, wx):
        for y, ay in zip(ys, wy):
            beta = (x + 1j * y) / np.sqrt(eta)
            r, phi = abs(beta), np.angle(beta)
            # D(r e^{i phi}) = e^{i phi n} exp(r (a^dag - a)) e^{-i phi n}
            Dr = (Vd * np.exp(-1j * r * lam)) @ V.conj().T      # first dim rows
            ph = np.exp(1j * phi * n_idx)
            Drows = ph[:dim, None] * Dr * ph.conj()[None, :]
            R += ax * ay * (Drows * th) @ Drows.conj().T
    return R / (np.pi * eta)


def heterodyne_monte_carlo(c: Constellation, T: float, xi: float, det: DetectorParams,
                           n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Labels and noisy heterodyne outcomes (natural units) for ``n`` channel uses.

    Bob's input is the displaced thermal state with amplitude ``sqrt(T) alpha``
    and mean photon number ``T xi / 2``; ideal heterodyne adds vacuum noise,
    the detector efficiency mixes in vacuum, and electronics add ``nu_el``.
    """
    rng = np.random.default_rng(seed)
    labels = rng.choice(len(c.probabilities), size=n, p=c.probabilities)

    def cgauss(var):
        # complex Gaussian with per-quadrature variance ``var``
        return np.sqrt(var) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))

    field = np.sqrt(T) * c.amplitudes[labels] + cgauss(T * xi / 4)
    ideal = field + cgauss(0.5)
    eta = det.eta_d
    lossy = np.sqrt(eta) * ideal + cgauss((1 - eta) / 2)
    return labels, lossy + cgauss(det.nu_el / 2)


def finite_difference_gradient(f, X: np.ndarray, directions, h: float = 1e-5, order: int = 2) -> np.ndarray:
    """Central-difference directional derivatives of ``f`` at ``X``.

    ``order=2`` is ``(f(X + hD) - f(X - hD)) / 2h``; ``order=4`` adds the
    ``+-2h`` points, which allows a larger step (less round-off) for the same
    truncation error.
    """
    if order == 2:
        return np.array([(f(X + h * D) - f(X - h * D)) / (2 * h) for D in directions])
    if order == 4:
        return np.array([(-f(X + 2 * h * D) + 8 * f(X + h * D) - 8 * f(X - h * D) + f(X - 2 * h * D)) / (12 * h)
                         for D in directions])
    raise ValueError("order must be 2 or 4")


def sample_from_table(table: np.ndarray, probabilities, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``(x, z)`` samples with ``x ~ probabilities`` and ``z | x ~ table[x]``."""
    rng = np.random.default_rng(seed)
    table = np.asarray(table, float)
    x = rng.choice(table.shape[0], size=n, p=probabilities)
    cdf = np.cumsum(table, axis=1)
    cdf /= cdf[:, -1:]
    z = (rng.random(n)[:, None] > cdf[x]).sum(axis=1)
    return x, z


def sampled_statistics(c: Constellation, T: float, xi: float, det: DetectorParams, n: int,
                       seed: int) -> StateStatistics:
    """Per-state raw moments of ``n`` Gaussian-channel outcomes, without drawing them one by one.

    For ``C`` Gaussian samples with mean ``mu`` and variance ``s2`` the sample
    mean is ``N(mu, s2 / C)`` and the centred sum of squares is ``s2 chi2(C - 1)``,
    independent of the mean; the raw second moment follows from the two.
    Quadratures are independent for this channel.
    """
    rng = np.random.default_rng(seed)
    ref = gaussian_statistics(T, xi, det, c)
    counts = rng.multinomial(n, c.probabilities)
    safe = np.maximum(counts, 1)
    out = []
    for mu, raw2 in ((ref.fq, ref.sq), (ref.fp, ref.sp)):
        s2 = raw2 - mu ** 2
        mean = mu + np.sqrt(s2 / safe) * rng.standard_normal(len(mu))
        centred = s2 * rng.chisquare(np.maximum(safe - 1, 1))
        centred = np.where(counts > 1, centred, 0.0)
        out += [mean, (centred + safe * mean ** 2) / safe]
    return StateStatistics(out[0], out[2], out[1], out[3], counts)
