"""Parameter estimation: shot-noise calibration, channel estimates and SDP statistics.

Per-quadrature values are in shot-noise units (SNU).  Transmitted symbols are
converted from natural units by ``x = 2 Re(alpha)``, ``x = 2 Im(alpha)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constellation import N_STATES, Constellation
from .fockspace import DetectorParams

STAT_NAMES = ("fq", "fp", "sq", "sp")


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class StateStatistics:
    """Per-state expectation values of Bob's four observables."""

    fq: np.ndarray
    fp: np.ndarray
    sq: np.ndarray
    sp: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        for name in STAT_NAMES:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (N_STATES,):
                raise ValueError(f"{name} must have {N_STATES} entries")
            object.__setattr__(self, name, v)
        if self.counts is not None:
            cnt = np.asarray(self.counts, dtype=np.int64)
            if cnt.shape != (N_STATES,) or np.any(cnt < 0):
                raise ValueError("counts must be 16 non-negative integers")
            object.__setattr__(self, "counts", cnt)

    def as_array(self) -> np.ndarray:
        """Shape (16, 4) array with columns fq, fp, sq, sp."""
        return np.stack([self.fq, self.fp, self.sq, self.sp], axis=1)

    def moments_consistent(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.sq + tol >= self.fq**2) and np.all(self.sp + tol >= self.fp**2))


@dataclass(frozen=True)
class ChannelEstimate:
    T_hat: float
    xi_hat: float
    V_B: float
    m: int


@dataclass(frozen=True)
class CalibrationResult:
    shot_variance_raw: float
    nu_el: float
    conversion_gain: float

    def to_snu(self, samples: np.ndarray) -> np.ndarray:
        """Rescale raw receiver samples so the vacuum quadrature variance is 1 + nu_el."""
        return np.asarray(samples) * self.conversion_gain


def _quadrature_variance(block) -> float:
    z = np.asarray(block)
    if np.iscomplexobj(z):
        z = np.concatenate([z.real, z.imag])
    return float(np.var(z))


def calibrate(vacuum_block, dark_block) -> CalibrationResult:
    """Shot-noise and electronic-noise calibration from a vacuum and a dark capture.

    The vacuum capture (local oscillator on, signal blocked) contains shot plus
    electronic noise; the dark capture (local oscillator off) electronic noise
    only.  Complex captures contribute both quadratures.
    """
    v_vac = _quadrature_variance(vacuum_block)
    v_dark = _quadrature_variance(dark_block)
    if v_vac <= v_dark:
        raise EstimationError("vacuum variance must exceed dark variance")
    shot = v_vac - v_dark
    return CalibrationResult(shot, v_dark / shot, 1.0 / np.sqrt(shot))


def symbols_to_quadratures(values: np.ndarray) -> np.ndarray:
    """Interleave the two SNU quadratures ``2 Re, 2 Im`` of each NU amplitude."""
    v = np.asarray(values, dtype=complex)
    out = np.empty(2 * v.size)
    out[0::2] = 2 * v.real
    out[1::2] = 2 * v.imag
    return out


def outcomes_to_quadratures(zeta: np.ndarray) -> np.ndarray:
    """Interleave per-quadrature SNU outcomes stored as complex numbers."""
    z = np.asarray(zeta, dtype=complex)
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def estimate_channel(x, y, det: DetectorParams, V_A: float | None = None) -> ChannelEstimate:
    """Transmittance and excess noise under the additive Gaussian noise model.

    ``x`` and ``y`` are matched per-quadrature SNU sequences.  ``V_A`` defaults
    to the empirical variance of ``x``, centred like the variance ``V_B`` of ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise EstimationError("x and y must be 1-D sequences of equal length")
    m = x.size
    sxx = float(x @ x)
    if sxx == 0.0:
        raise EstimationError("x has zero energy")
    slope = float(x @ y) / sxx
    t_hat = slope**2 / (0.5 * det.eta_d)
    va = float(np.var(x)) if V_A is None else float(V_A)
    v_b = float(np.var(y))
    g = 0.5 * det.eta_d * t_hat
    xi_hat = (v_b - g * va - det.nu_el - 1.0) / g if g > 0 else np.inf
    return ChannelEstimate(t_hat, xi_hat, v_b, m)


def gaussian_statistics(T: float, xi: float, det: DetectorParams, c: Constellation) -> StateStatistics:
    """Closed-form observable expectations for the Gaussian channel."""
    g2 = det.eta_d * T
    a = c.amplitudes
    base = 1.0 + 0.5 * g2 * xi + det.nu_el
    return StateStatistics(
        fq=np.sqrt(2 * g2) * a.real,
        fp=np.sqrt(2 * g2) * a.imag,
        sq=2 * g2 * a.real**2 + base,
        sp=2 * g2 * a.imag**2 + base,
    )


def general_statistics(labels, zeta, probabilities=None) -> StateStatistics:
    """Per-state empirical first and second moments of the two quadratures.

    ``zeta`` holds complex outcomes whose real and imaginary parts are the SNU
    quadratures.  With ``probabilities`` given, any state with ``p_k > 0`` that
    was never sent raises.
    """
    labels = np.asarray(labels, dtype=np.int64)
    z = np.asarray(zeta, dtype=complex)
    if labels.shape != z.shape:
        raise EstimationError("labels and outcomes must have equal length")
    counts = np.bincount(labels, minlength=N_STATES)
    required = np.ones(N_STATES, bool) if probabilities is None else np.asarray(probabilities) > 0
    missing = np.flatnonzero(required & (counts == 0))
    if missing.size:
        raise EstimationError(f"no outcomes recorded for states {missing.tolist()}")
    safe = np.maximum(counts, 1)

    def mean(v):
        return np.bincount(labels, weights=v, minlength=N_STATES) / safe

    return StateStatistics(mean(z.real), mean(z.imag), mean(z.real**2), mean(z.imag**2), counts)


def statistics_discrepancy(a: StateStatistics, b: StateStatistics) -> np.ndarray:
    """Elementwise ``a - b`` as a (16, 4) array."""
    return a.as_array() - b.as_array()


def save_statistics(path: str | Path, stats: StateStatistics, probabilities, header: dict | None = None) -> None:
    """Write the 16-row statistics table as CSV; ``header`` goes into ``#`` comment lines."""
    counts = stats.counts if stats.counts is not None else np.zeros(N_STATES, np.int64)
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["k", "p_k", "C_k", *STAT_NAMES])
        for k in range(N_STATES):
            w.writerow([k, repr(float(probabilities[k])), int(counts[k]),
                        *(repr(float(getattr(stats, s)[k])) for s in STAT_NAMES)])


def load_statistics(path: str | Path) -> tuple[StateStatistics, np.ndarray, dict]:
    """Read a file written by :func:`save_statistics`."""
    header = {}
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                header[key.strip()] = val.strip()
            else:
                lines.append(line)
        for row in csv.DictReader(lines):
            rows.append(row)
    if len(rows) != N_STATES:
        raise EstimationError(f"expected {N_STATES} rows, found {len(rows)}")
    rows.sort(key=lambda r: int(r["k"]))
    col = {s: np.array([float(r[s]) for r in rows]) for s in STAT_NAMES}
    counts = np.array([int(r["C_k"]) for r in rows])
    probs = np.array([float(r["p_k"]) for r in rows])
    stats = StateStatistics(**col, counts=counts if counts.any() else None)
    return stats, probs, header
