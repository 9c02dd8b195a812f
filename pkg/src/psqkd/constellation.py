"""Probabilistically shaped 16QAM coherent-state ensembles.

Amplitudes are in natural units (NU): a coherent state |alpha> has mean
heterodyne outcome alpha and shot-noise variance 1/2 per quadrature.  The
modulation variance is reported in shot-noise units, ``V_A = 2 <|alpha|^2>``.

Index convention: ``k = 4 * row + col`` with ``Re(alpha_k) = scale * LEVELS[col]``
and ``Im(alpha_k) = scale * LEVELS[row]``, ``LEVELS = (3, 1, -1, -3)``.  The
same index names Bob's key-map region of the symbol (see ``fockspace``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

LEVELS = np.array([3.0, 1.0, -1.0, -3.0])
UNIT_GRID = (LEVELS[None, :] + 1j * LEVELS[:, None]).ravel()
N_STATES = 16


class ConvergenceError(RuntimeError):
    """Raised when the scale/probability fixed point cannot be solved."""


def maxwell_boltzmann(amplitudes: np.ndarray, nu: float) -> np.ndarray:
    """Point probabilities ``p_k ~ exp(-nu |alpha_k|^2)``."""
    energy = np.abs(np.asarray(amplitudes)) ** 2
    w = np.exp(-nu * (energy - energy.min()))
    return w / w.sum()


@dataclass(frozen=True)
class Constellation:
    amplitudes: np.ndarray
    probabilities: np.ndarray
    nu: float
    scale: float

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        p = np.asarray(self.probabilities, dtype=float)
        if a.shape != (N_STATES,) or p.shape != (N_STATES,):
            raise ValueError("a 16QAM constellation needs 16 amplitudes and 16 probabilities")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_scale(cls, scale: float, nu: float) -> "Constellation":
        amps = scale * UNIT_GRID
        return cls(amps, maxwell_boltzmann(amps, nu), nu, scale)

    @property
    def modulation_variance(self) -> float:
        return modulation_variance(self)

    def to_record(self) -> dict:
        return {
            "nu": float(self.nu),
            "scale": float(self.scale),
            "modulation_variance": modulation_variance(self),
            "probabilities": [float(v) for v in self.probabilities],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)

    @classmethod
    def from_record(cls, record: dict) -> "Constellation":
        amps = record["scale"] * UNIT_GRID
        return cls(amps, np.asarray(record["probabilities"]), record["nu"], record["scale"])


@dataclass(frozen=True)
class LabeledSymbols:
    labels: np.ndarray
    values: np.ndarray
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)


def modulation_variance(c: Constellation) -> float:
    """Per-quadrature modulation variance in SNU, ``2 * sum_k p_k |alpha_k|^2``."""
    return float(2.0 * np.sum(c.probabilities * np.abs(c.amplitudes) ** 2))


def build_constellation(nu: float, va_target: float, tol: float = 1e-10,
                        max_iter: int = 200) -> Constellation:
    """Shape the 16QAM grid with parameter ``nu`` and scale it to ``V_A = va_target``.

    The probabilities depend on the scale, so the scale is found by a bracketed
    root search on ``V_A(scale) - va_target`` with the probabilities refreshed
    at every trial scale.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if va_target <= 0:
        raise ValueError("va_target must be positive")

    def excess(s):
        return modulation_variance(Constellation.from_scale(s, nu)) - va_target

    lo, hi = 0.0, np.sqrt(va_target / 4.0)
    # V_A is increasing in the scale; grow the bracket until it straddles the target.
    for _ in range(max_iter):
        if excess(hi) > 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ConvergenceError("could not bracket the modulation variance")
    try:
        s = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    except (RuntimeError, ValueError) as exc:
        raise ConvergenceError(str(exc)) from exc
    c = Constellation.from_scale(s, nu)
    if abs(modulation_variance(c) - va_target) >= tol:
        raise ConvergenceError(
            f"V_A={modulation_variance(c)!r} missed target {va_target!r} by more than {tol}")
    return c


def sample_symbols(c: Constellation, n: int, seed: int) -> LabeledSymbols:
    """Draw ``n`` i.i.d. symbol labels from ``c.probabilities``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(N_STATES, size=n, p=c.probabilities)
    return LabeledSymbols(labels, c.amplitudes[labels], seed)
