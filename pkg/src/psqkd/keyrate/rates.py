"""Key-map statistics, error-correction leakage, rates, reports and sweeps."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ..channel import ChannelParams
from ..constellation import N_STATES, Constellation, build_constellation
from ..estimation import StateStatistics, gaussian_statistics
from ..fockspace import DetectorParams, KeyMapGeometry
from .objective import DEFAULT_EPS
from .problem import build_gmap, build_problem
from .solver import solve

log = logging.getLogger(__name__)

BOTTOM = N_STATES  # index of the discarded symbol in tables and classifications


def conditional_distribution(ch: ChannelParams, det: DetectorParams, c: Constellation,
                             geom: KeyMapGeometry) -> np.ndarray:
    """``P(z | x)`` for the Gaussian channel: shape (16, 17), last column the discard symbol.

    Bob's outcome in natural units is complex Gaussian with mean
    ``sqrt(eta_d T) alpha_x`` and per-quadrature variance
    ``(1 + nu_el + eta_d T xi / 2) / 2``; rectangle probabilities are products
    of normal CDF differences.
    """
    mean = np.sqrt(det.eta_d * ch.T) * c.amplitudes
    s = np.sqrt((1 + det.nu_el + 0.5 * det.eta_d * ch.T * ch.xi) / 2)
    table = np.zeros((N_STATES, N_STATES + 1))
    for z, (xl, xu, yl, yu) in enumerate(geom.rectangles()):
        px = ndtr((xu - mean.real) / s) - ndtr((xl - mean.real) / s)
        py = ndtr((yu - mean.imag) / s) - ndtr((yl - mean.imag) / s)
        table[:, z] = px * py
    table[:, BOTTOM] = np.clip(1.0 - table[:, :N_STATES].sum(axis=1), 0.0, None)
    return table


def key_map_classify(zeta, geom: KeyMapGeometry) -> np.ndarray:
    """Key symbol for outcomes ``zeta`` (natural units); ``BOTTOM`` for discarded outcomes.

    Points inside the axis strips ``|x| < delta`` or beyond the detection limit
    are discarded.  A point on a shared boundary goes to the larger index.
    """
    zeta = np.asarray(zeta, dtype=complex)
    a2, d, lim = 2 * geom.alpha0, geom.delta, geom.detection_limit

    def axis_index(v):
        # order encodes the tie-break: larger indices are tested first
        conds = [v <= -a2, (v >= -a2) & (v <= -d), (v >= d) & (v <= a2), v >= a2]
        idx = np.select(conds, [3, 2, 1, 0], default=-1)
        idx[(np.abs(v) < d) | (np.abs(v) > lim)] = -1
        return idx

    col = axis_index(zeta.real)
    row = axis_index(zeta.imag)
    z = 4 * row + col
    z[(col < 0) | (row < 0)] = BOTTOM
    return z


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def error_correction_leakage(table: np.ndarray, probabilities, beta: float) -> tuple[float, float, float, float]:
    """``(delta_EC, p_pass, H(Z), I(X;Z))`` on the post-selected alphabet, in bits per passed use."""
    table = np.asarray(table, float)
    p = np.asarray(probabilities, float)
    joint = p[:, None] * table[:, :N_STATES]
    p_pass = float(joint.sum())
    if p_pass <= 0:
        raise ValueError("no outcome survives post-selection (p_pass = 0)")
    joint /= p_pass
    h_z = _entropy_bits(joint.sum(axis=0))
    h_x = _entropy_bits(joint.sum(axis=1))
    mi = h_x + h_z - _entropy_bits(joint.ravel())
    return h_z - beta * mi, p_pass, h_z, mi


def asymptotic_rate(lower_bound: float, delta_ec: float, p_pass: float) -> tuple[float, bool]:
    """Per-symbol rate clamped at zero, and whether the protocol aborts."""
    raw = lower_bound - p_pass * delta_ec
    return (raw, False) if raw > 0 else (0.0, True)


def system_rate(r_infty: float, symbol_rate: float, a: float, b: float, fer: float) -> float:
    """Bits per second after removing estimation (``a``) and training (``b``) symbols and failed frames."""
    if a < 0 or b < 0 or a + b > 1:
        raise ValueError("need 0 <= a + b <= 1")
    if not 0 <= fer <= 1:
        raise ValueError("frame error rate must lie in [0, 1]")
    return symbol_rate * (1 - a - b) * (1 - fer) * r_infty


@dataclass(frozen=True)
class RateContext:
    """Everything needed to evaluate one key-rate point."""

    nu: float = 0.2
    va: float = 2.03
    T: float = 0.009
    xi: float = 0.019
    eta_d: float = 0.714
    nu_el: float = 0.064
    n_cutoff: int = 12
    delta0: float = 0.6
    beta: float = 0.95
    fer: float = 0.15
    a: float = 0.1
    b: float = 0.25
    symbol_rate: float = 1e9
    tol_gap: float = 1e-5
    max_iter: int = 60
    eps: float = DEFAULT_EPS
    length_km: float | None = None
    fiber_loss_db_per_km: float = 0.162

    def with_length(self, length_km: float) -> "RateContext":
        ch = ChannelParams.from_length(length_km, self.xi, self.fiber_loss_db_per_km)
        return replace(self, T=ch.T, length_km=length_km)


@dataclass
class KeyRateReport:
    relent_lower_bound: float
    feasible_value: float
    gap: float
    delta_ec: float
    p_pass: float
    r_infty: float
    r_system: float
    aborted: bool
    converged: bool
    iterations: int
    eps: float
    h_z: float
    i_xz: float
    max_violation: float
    elapsed_s: float
    inputs: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        """Plain-data view; wall-clock time is left out unless asked for so reruns are identical."""
        d = asdict(self)
        if not include_timing:
            d.pop("elapsed_s")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, default=float)

    def csv_row(self) -> dict:
        inp = self.inputs
        return {"distance_km": inp.get("length_km"), "T": inp.get("T"), "xi": inp.get("xi"),
                "delta0": inp.get("delta0"), "r_infty": self.r_infty, "r_system": self.r_system,
                "gap": self.gap, "n_cutoff": inp.get("n_cutoff")}


CSV_FIELDS = ["distance_km", "T", "xi", "delta0", "r_infty", "r_system", "gap", "n_cutoff"]


def append_results_csv(path: str | Path, reports, header: dict | None = None) -> None:
    """Append one row per report; a new file starts with ``# key: value`` lines from ``header``."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w.writeheader()
        for rep in reports:
            w.writerow(rep.csv_row())


def compute_key_rate(ctx: RateContext, stats: StateStatistics | None = None,
                     constellation: Constellation | None = None,
                     table: np.ndarray | None = None) -> KeyRateReport:
    """Build, solve and combine into a :class:`KeyRateReport`.

    ``stats`` defaults to the Gaussian-channel statistics of ``ctx``; ``table``
    (the ``P(z|x)`` used for the leakage term) defaults to the Gaussian model.
    """
    c = constellation if constellation is not None else build_constellation(ctx.nu, ctx.va)
    det = DetectorParams(ctx.eta_d, ctx.nu_el, ctx.n_cutoff)
    ch = ChannelParams(ctx.T, ctx.xi)
    if stats is None:
        stats = gaussian_statistics(ctx.T, ctx.xi, det, c)
    geom = KeyMapGeometry.at_receiver(c.scale, ctx.T, ctx.eta_d, ctx.delta0)
    problem = build_problem(stats, c, det)
    gmap = build_gmap(geom, det)
    res = solve(problem, gmap, tol_gap=ctx.tol_gap, max_iter=ctx.max_iter, eps=ctx.eps)
    if table is None:
        table = conditional_distribution(ch, det, c, geom)
    delta_ec, p_pass, h_z, mi = error_correction_leakage(table, c.probabilities, ctx.beta)
    r, aborted = asymptotic_rate(res.lower_bound, delta_ec, p_pass)
    rs = system_rate(r, ctx.symbol_rate, ctx.a, ctx.b, ctx.fer)
    inputs = {**asdict(ctx), "scale": c.scale, "alpha0": geom.alpha0, "delta": geom.delta}
    return KeyRateReport(res.lower_bound, res.feasible_value, res.gap, delta_ec, p_pass, r, rs,
                         aborted, res.converged, res.iterations, res.eps, h_z, mi,
                         res.max_violation, res.elapsed, inputs)


def _run(ctx):
    return compute_key_rate(ctx)


def _map(contexts, workers: int):
    if workers <= 1:
        return [_run(c) for c in contexts]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, contexts))


def sweep_delta0(delta0_values, ctx: RateContext, workers: int = 1) -> tuple[list[KeyRateReport], float]:
    """Rate versus post-selection parameter; returns the reports and the maximising value."""
    reports = _map([replace(ctx, delta0=float(d)) for d in delta0_values], workers)
    best = max(range(len(reports)), key=lambda i: reports[i].r_infty)
    return reports, float(delta0_values[best])


def sweep_distance(lengths_km, ctx: RateContext, workers: int = 1) -> list[KeyRateReport]:
    """Rate versus fibre length at fixed excess noise and detector parameters."""
    return _map([ctx.with_length(float(L)) for L in lengths_km], workers)
