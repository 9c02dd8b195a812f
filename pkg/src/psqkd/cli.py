"""Command-line front end: simulate, recover, estimate, key rates, sweeps and oracles.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 infeasible constraints.  Every artifact embeds the config hash, and reruns
with an unchanged config reproduce the same files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (WaveformBlock, synthesize_calibration,
                      synthesize_frame, transmit_symbols)
from .config import (ConfigError, CampaignConfig, dump_config, load_config, parse_override)
from .constellation import ConvergenceError, LabeledSymbols, build_constellation, sample_symbols
from .dsp import DspError, calibrated_payload, run_pipeline, write_diagnostics
from .estimation import (EstimationError, estimate_channel, gaussian_statistics, general_statistics,
                         load_statistics, outcomes_to_quadratures, save_statistics,
                         statistics_discrepancy, symbols_to_quadratures)
from .fockspace import DetectorParams, KeyMapGeometry, region_operator
from .keyrate import (InfeasibleError, KeyRateReport, RateContext, SdpError, append_results_csv,
                      compute_key_rate, conditional_distribution, key_map_classify)
from .oracles import (ORACLES, finite_difference_gradient, heterodyne_monte_carlo, povm_quadrature,
                      sample_from_table)

log = logging.getLogger("psqkd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4

# reference-experiment figures the reproduction is compared against
REFERENCE_GAUSSIAN_KBPS = 322.21
REFERENCE_GENERAL_KBPS = 171.42

WAVEFORMS = ("quantum", "reference", "vacuum", "dark")
MIN_EXPECTED_COUNT = 20


# ---------------------------------------------------------------------------
# file helpers


def _header(cfg: CampaignConfig, **extra) -> dict:
    return {"config_hash": cfg.hash(), "psqkd_version": __version__, **extra}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def _read_commented_csv(path: Path) -> tuple[dict, list[dict]]:
    header, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                header[k.strip()] = v.strip()
            else:
                lines.append(line)
    return header, list(csv.DictReader(lines))


def save_symbols(path: Path, symbols: LabeledSymbols, header: dict) -> None:
    """Ground-truth labels and natural-unit amplitudes, one row per payload symbol."""
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["index", "label", "re", "im"])
        for i, (lab, val) in enumerate(zip(symbols.labels, symbols.values)):
            w.writerow([i, int(lab), repr(float(val.real)), repr(float(val.imag))])


def load_symbols(path: Path) -> tuple[LabeledSymbols, dict]:
    header, rows = _read_commented_csv(path)
    if not rows:
        raise OSError(f"{path}: no symbol rows")
    try:
        labels = np.array([int(r["label"]) for r in rows])
        values = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise OSError(f"{path}: malformed symbol file ({exc})") from exc
    return LabeledSymbols(labels, values), header


def save_outcomes(path: Path, zeta_snu: np.ndarray, header: dict) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["index", "q", "p"])
        for i, z in enumerate(zeta_snu):
            w.writerow([i, repr(float(z.real)), repr(float(z.imag))])


def load_outcomes(path: Path) -> tuple[np.ndarray, dict]:
    header, rows = _read_commented_csv(path)
    try:
        z = np.array([float(r["q"]) + 1j * float(r["p"]) for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise OSError(f"{path}: malformed outcome file ({exc})") from exc
    return z, header


# ---------------------------------------------------------------------------
# pipeline steps (also used by reproduce-paper)


def step_simulate(cfg: CampaignConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
    sy = sample_symbols(c, cfg.simulation.n_symbols, cfg.seeds.symbols)
    frame, det, ch = cfg.frame_config(), cfg.detector_params(), cfg.channel_params()
    gain = cfg.channel.residual_gain_abs * np.exp(1j * cfg.channel.residual_gain_phase)
    q, r = synthesize_frame(sy, frame, cfg.seeds.channel, ch, det, residual_gain=gain)
    vac = synthesize_calibration(len(q), frame, det, cfg.seeds.vacuum, "vacuum")
    dark = synthesize_calibration(len(q), frame, det, cfg.seeds.dark, "dark")
    hdr = _header(cfg)
    for name, block in zip(WAVEFORMS, (q, r, vac, dark)):
        block.save(out / f"{name}.bin", header=hdr)
    save_symbols(out / "symbols.csv", sy, _header(cfg, scale=repr(c.scale)))
    (out / "config.yaml").write_text(dump_config(cfg))
    return {"n_symbols": len(sy), "n_samples": len(q), "T": ch.T, "xi": ch.xi}


def step_recover(cfg: CampaignConfig, inp: Path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    blocks = {name: WaveformBlock.load(inp / f"{name}.bin") for name in WAVEFORMS}
    frame, dspc = cfg.frame_config(), cfg.dsp_config()
    rec, state = run_pipeline(blocks["quantum"], blocks["reference"], frame, dspc)
    n = int(blocks["quantum"].tags["n_payload"])
    y, cal = calibrated_payload(rec, state, blocks["vacuum"], blocks["dark"], frame, dspc, n_payload=n)
    write_diagnostics(out / "diagnostics.csv", rec)
    hdr = _header(cfg, shot_variance_raw=repr(cal.shot_variance_raw), nu_el=repr(cal.nu_el),
                  conversion_gain=repr(float(cal.conversion_gain)))
    save_outcomes(out / "recovered.csv", y, hdr)
    return {"n_payload": n, "nu_el_calibrated": cal.nu_el}


def _estimation_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=m, replace=False))


def step_estimate(cfg: CampaignConfig, symbols_path: Path, outcomes_path: Path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    sy, _ = load_symbols(symbols_path)
    y, _ = load_outcomes(outcomes_path)
    if len(y) != len(sy):
        raise EstimationError(f"{len(sy)} symbols but {len(y)} recovered outcomes")
    idx = _estimation_subset(len(sy), cfg.simulation.estimation_fraction, cfg.seeds.estimation)
    det = cfg.detector_params()
    c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
    est = estimate_channel(symbols_to_quadratures(sy.values[idx]), outcomes_to_quadratures(y[idx]),
                           det, cfg.constellation.va)
    stats = general_statistics(sy.labels[idx], y[idx], c.probabilities)
    hdr = _header(cfg, T_hat=repr(est.T_hat), xi_hat=repr(est.xi_hat), m=est.m)
    save_statistics(out / "statistics.csv", stats, c.probabilities, hdr)
    summary = {"T_hat": est.T_hat, "xi_hat": est.xi_hat, "V_B": est.V_B, "m": est.m,
               "config_hash": cfg.hash()}
    _write_json(out / "channel_estimate.json", summary)
    return summary


def _report_payload(cfg: CampaignConfig, rep: KeyRateReport) -> dict:
    return {"config_hash": cfg.hash(), **rep.to_dict()}


def step_keyrate(cfg: CampaignConfig, out: Path, stats_path: Path | None = None,
                 ctx: RateContext | None = None, name: str = "report") -> KeyRateReport:
    out.mkdir(parents=True, exist_ok=True)
    ctx = ctx or cfg.rate_context()
    stats = None
    if stats_path is not None:
        stats, probs, _ = load_statistics(stats_path)
        c = build_constellation(ctx.nu, ctx.va)
        if not np.allclose(probs, c.probabilities, rtol=1e-9, atol=1e-12):
            raise EstimationError("statistics file was made for a different constellation")
    rep = compute_key_rate(ctx, stats=stats)
    if not rep.converged:
        log.warning("solver stopped before the gap tolerance (gap %.3e); bound is still certified", rep.gap)
    _write_json(out / f"{name}.json", _report_payload(cfg, rep))
    return rep


def _point_worker(args):
    ctx, path, cfg_dict = args
    rep = compute_key_rate(ctx)
    Path(path).write_text(json.dumps({**cfg_dict, **rep.to_dict()}, indent=2, sort_keys=True,
                                     default=float) + "\n")
    return rep


def run_points(cfg: CampaignConfig, contexts: list[RateContext], names: list[str], out: Path,
               workers: int) -> list[KeyRateReport]:
    """Evaluate sweep points (each written to its own file) and return reports in input order."""
    points = out / "points"
    points.mkdir(parents=True, exist_ok=True)
    jobs = [(ctx, points / f"{nm}.json", {"config_hash": cfg.hash()}) for ctx, nm in zip(contexts, names)]
    if workers <= 1:
        reports = [_point_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_point_worker, jobs))
    results = out / "results.csv"
    if results.exists():
        results.unlink()
    append_results_csv(results, reports, header=_header(cfg))
    return reports


def step_sweep_delta0(cfg: CampaignConfig, out: Path, workers: int, grid=None) -> dict:
    grid = [float(g) for g in (grid if grid is not None else cfg.keyrate.delta0_grid)]
    base = cfg.rate_context()
    geom_limit = 2 * build_constellation(base.nu, base.va).scale
    valid = [g for g in grid if g < geom_limit]
    skipped = [g for g in grid if g >= geom_limit]
    if skipped:
        log.warning("skipping delta0 values %s: strips would cover the inner key-map cells "
                    "(need delta0 < %.4f)", skipped, geom_limit)
    if not valid:
        raise ConfigError("keyrate.delta0_grid", f"no value below {geom_limit:.4f}")
    reports = run_points(cfg, [replace(base, delta0=g) for g in valid],
                         [f"delta0_{g:.6g}" for g in valid], out, workers)
    rates = [r.r_infty for r in reports]
    best = int(np.argmax(rates))
    summary = {"config_hash": cfg.hash(), "delta0": valid, "r_infty": rates,
               "r_system": [r.r_system for r in reports], "argmax_delta0": valid[best],
               "interior_maximum": 0 < best < len(valid) - 1, "configured_delta0": cfg.keyrate.delta0,
               "skipped": skipped}
    _write_json(out / "sweep_delta0.json", summary)
    return summary


def step_sweep_distance(cfg: CampaignConfig, out: Path, workers: int, lengths=None) -> dict:
    lengths = [float(v) for v in (lengths if lengths is not None else cfg.channel.lengths_km)]
    base = cfg.rate_context()
    reports = run_points(cfg, [base.with_length(L) for L in lengths],
                         [f"distance_{L:.6g}km" for L in lengths], out, workers)
    rates = [r.r_infty for r in reports]
    summary = {"config_hash": cfg.hash(), "length_km": lengths, "r_infty": rates,
               "r_system": [r.r_system for r in reports],
               "monotone_non_increasing": bool(np.all(np.diff(rates) <= 1e-12))}
    _write_json(out / "sweep_distance.json", summary)
    return summary


# ---------------------------------------------------------------------------
# oracles


def oracle_povm_quadrature(cfg: CampaignConfig, rect, n_cutoff: int) -> dict:
    det = DetectorParams(cfg.detector.eta_d, cfg.detector.nu_el, n_cutoff)
    Q = povm_quadrature(rect, det)
    R = region_operator(*rect, det)
    return {"rect": list(rect), "n_cutoff": n_cutoff, "real": Q.real.tolist(), "imag": Q.imag.tolist(),
            "max_abs_difference_closed_form": float(np.abs(Q - R).max())}


def oracle_channel(cfg: CampaignConfig, n: int, seed: int) -> dict:
    c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
    det, T, xi = cfg.detector_params(), cfg.transmittance(), cfg.channel.xi
    labels, zeta = heterodyne_monte_carlo(c, T, xi, det, n, seed)
    emp = general_statistics(labels, np.sqrt(2) * zeta, c.probabilities)
    ref = gaussian_statistics(T, xi, det, c)
    # standard errors of per-state sample means of x and x^2
    se = np.zeros((16, 4))
    z_snu = np.sqrt(2) * zeta
    for k in range(16):
        q, p = z_snu[labels == k].real, z_snu[labels == k].imag
        m = max(len(q), 1)
        se[k] = [q.std() / np.sqrt(m), p.std() / np.sqrt(m), (q**2).std() / np.sqrt(m), (p**2).std() / np.sqrt(m)]
    z = statistics_discrepancy(emp, ref) / np.where(se > 0, se, np.inf)
    return {"n": n, "seed": seed, "empirical": emp.as_array().tolist(), "closed_form": ref.as_array().tolist(),
            "max_abs_z": float(np.abs(z).max())}


def oracle_gradient(cfg: CampaignConfig, n_cutoff: int, seed: int) -> dict:
    from .keyrate import build_gmap, objective
    det = DetectorParams(cfg.detector.eta_d, cfg.detector.nu_el, n_cutoff)
    c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
    geom = KeyMapGeometry.at_receiver(c.scale, cfg.transmittance(), det.eta_d, cfg.keyrate.delta0)
    gmap = build_gmap(geom, det)
    rng = np.random.default_rng(seed)
    n = 16 * det.dim
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = M @ M.conj().T
    rho /= np.trace(rho).real
    _, G = objective(rho, gmap)
    dirs = []
    for _ in range(5):
        H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        H = H + H.conj().T
        H -= np.trace(H) / n * np.eye(n)
        dirs.append(H / np.linalg.norm(H))
    fd = finite_difference_gradient(lambda X: objective(X, gmap)[0], rho, dirs, h=1e-6)
    an = np.array([float(np.vdot(G, D).real) for D in dirs])
    rel = np.abs(fd - an) / np.maximum(np.abs(an), 1e-12)
    return {"n_cutoff": n_cutoff, "seed": seed, "finite_difference": fd.tolist(), "analytic": an.tolist(),
            "max_relative_error": float(rel.max())}


def oracle_erf_table(cfg: CampaignConfig, n: int, seed: int) -> dict:
    c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
    det, ch = cfg.detector_params(), cfg.channel_params()
    geom = KeyMapGeometry.at_receiver(c.scale, ch.T, det.eta_d, cfg.keyrate.delta0)
    table = conditional_distribution(ch, det, c, geom)
    labels, zeta = heterodyne_monte_carlo(c, ch.T, ch.xi, det, n, seed)
    z = key_map_classify(zeta, geom)
    joint = np.zeros_like(table)
    np.add.at(joint, (labels, z), 1.0)
    expected = c.probabilities[:, None] * table * n
    # normal z-scores only where the binomial count is large enough for them to mean anything
    usable = expected >= MIN_EXPECTED_COUNT
    sigma = np.sqrt(expected * (1 - expected / n))[usable]
    xs, zs = sample_from_table(table, c.probabilities, n, seed + 1)
    sampled = np.zeros_like(table)
    np.add.at(sampled, (xs, zs), 1.0)
    return {"n": n, "seed": seed, "table": table.tolist(), "cells_compared": int(usable.sum()),
            "max_abs_z_channel": float(np.abs((joint - expected)[usable] / sigma).max()),
            "max_abs_z_table_sampler": float(np.abs((sampled - expected)[usable] / sigma).max())}


# ---------------------------------------------------------------------------
# argument parsing


def _config_from_args(args) -> CampaignConfig:
    """Config file (or the one saved next to the input capture), then flag overrides."""
    overrides = dict(parse_override(s) for s in (args.set or []))
    path = args.config
    if path is None:
        near = [getattr(args, "inp", None), getattr(args, "symbols", None)]
        near = [p if p is None or p.is_dir() else p.parent for p in near]
        saved = [p / "config.yaml" for p in near if p is not None and (p / "config.yaml").exists()]
        path = saved[0] if saved else None
    for flag, key in [("n_cutoff", "detector.n_cutoff"), ("delta0", "keyrate.delta0"),
                      ("n_symbols", "simulation.n_symbols")]:
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    return load_config(path, overrides)


def _add_common(p):
    p.add_argument("--config", type=Path, help="campaign YAML file (defaults to the reference operating point)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field by dotted path, e.g. keyrate.beta=0.9")
    p.add_argument("--out", type=Path, help="output directory (relative paths go under $PSQKD_OUTPUT_ROOT)")
    p.add_argument("--n-cutoff", type=int, help="Fock cutoff (detector.n_cutoff)")
    p.add_argument("--delta0", type=float, help="post-selection parameter (keyrate.delta0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psqkd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write waveform captures and ground-truth symbols")
    _add_common(p)
    p.add_argument("--n-symbols", type=int, help="payload symbols (simulation.n_symbols)")

    p = sub.add_parser("recover", help="run the DSP chain on simulated captures")
    _add_common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory written by simulate")

    p = sub.add_parser("estimate", help="channel estimates and per-state statistics")
    _add_common(p)
    p.add_argument("--symbols", type=Path, required=True)
    p.add_argument("--outcomes", type=Path, required=True)

    p = sub.add_parser("keyrate", help="certified key rate for one operating point")
    _add_common(p)
    p.add_argument("--stats", type=Path, help="statistics file (default: Gaussian-channel model)")

    p = sub.add_parser("sweep-delta0", help="rate versus post-selection parameter")
    _add_common(p)
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep-distance", help="rate versus fibre length")
    _add_common(p)
    p.add_argument("--lengths", type=float, nargs="+")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("oracle", help="brute-force reference computations")
    _add_common(p)
    p.add_argument("name", help=f"one of {', '.join(ORACLES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--rect", type=float, nargs=4, default=[0.1, 0.9, -0.5, 0.7],
                   metavar=("XLOW", "XUP", "YLOW", "YUP"))

    p = sub.add_parser("reproduce-paper", help="reference operating point end to end at desk scale")
    _add_common(p)
    p.add_argument("--n-symbols", type=int, help="payload symbols for the waveform stage")
    p.add_argument("--mc-symbols", type=int, default=10_000_000,
                   help="symbol-level Monte-Carlo size for the general-statistics rate")
    p.add_argument("--skip-general", action="store_true", help="only the Gaussian-statistics rate")
    return ap


def _dispatch(args) -> int:
    cfg = _config_from_args(args)
    out = cfg.output_path(args.out)
    cmd = args.command
    if cmd == "simulate":
        info = step_simulate(cfg, out)
        print(f"config_hash {cfg.hash()}  wrote {info['n_symbols']} symbols to {out}")
    elif cmd == "recover":
        info = step_recover(cfg, args.inp, out)
        print(f"recovered {info['n_payload']} symbols -> {out / 'recovered.csv'}")
    elif cmd == "estimate":
        s = step_estimate(cfg, args.symbols, args.outcomes, out)
        print(f"T_hat={s['T_hat']:.6g}  xi_hat={s['xi_hat']:.6g}  (m={s['m']})")
    elif cmd == "keyrate":
        rep = step_keyrate(cfg, out, args.stats)
        append_results_csv(out / "results.csv", [rep], header=_header(cfg))
        print(f"r_infty={rep.r_infty:.6e} bits/symbol  r_system={rep.r_system / 1e3:.2f} kbps  "
              f"gap={rep.gap:.2e}  converged={rep.converged}")
    elif cmd == "sweep-delta0":
        s = step_sweep_delta0(cfg, out, args.workers, args.grid)
        print(f"argmax delta0={s['argmax_delta0']}  (configured {s['configured_delta0']})  "
              f"interior maximum: {s['interior_maximum']}")
    elif cmd == "sweep-distance":
        s = step_sweep_distance(cfg, out, args.workers, args.lengths)
        print(f"monotone non-increasing: {s['monotone_non_increasing']}")
    elif cmd == "oracle":
        if args.name not in ORACLES:
            raise ConfigError("oracle", f"unknown oracle '{args.name}' (choose from {', '.join(ORACLES)})")
        if args.name == "povm-quadrature":
            res = oracle_povm_quadrature(cfg, args.rect, args.n_cutoff or 6)
        elif args.name == "channel":
            res = oracle_channel(cfg, args.samples, args.seed)
        elif args.name == "gradient":
            res = oracle_gradient(cfg, args.n_cutoff or 3, args.seed)
        else:
            res = oracle_erf_table(cfg, args.samples, args.seed)
        res["config_hash"] = cfg.hash()
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"oracle_{args.name}.json", res)
        print(json.dumps({k: v for k, v in res.items() if not isinstance(v, list)}, sort_keys=True))
    elif cmd == "reproduce-paper":
        s = reproduce_paper(cfg, out, args.mc_symbols, args.skip_general)
        print(json.dumps(s, indent=2, sort_keys=True, default=float))
    return EXIT_OK


def reproduce_paper(cfg: CampaignConfig, out: Path, mc_symbols: int, skip_general: bool = False) -> dict:
    """Waveform chain at desk scale, then Gaussian- and general-statistics rates."""
    out.mkdir(parents=True, exist_ok=True)
    step_simulate(cfg, out / "capture")
    step_recover(cfg, out / "capture", out / "recovered")
    est = step_estimate(cfg, out / "capture" / "symbols.csv", out / "recovered" / "recovered.csv",
                        out / "estimate")
    rep = step_keyrate(cfg, out / "keyrate", name="gaussian")
    summary = {"config_hash": cfg.hash(), "desk_scale_T_hat": est["T_hat"], "desk_scale_xi_hat": est["xi_hat"],
               "gaussian_r_infty": rep.r_infty, "gaussian_r_system_kbps": rep.r_system / 1e3,
               "gaussian_gap": rep.gap, "reference_gaussian_kbps": REFERENCE_GAUSSIAN_KBPS,
               "gaussian_relative_deviation": rep.r_system / 1e3 / REFERENCE_GAUSSIAN_KBPS - 1}
    if not skip_general:
        c = build_constellation(cfg.constellation.nu, cfg.constellation.va)
        det, ch = cfg.detector_params(), cfg.channel_params()
        sy = sample_symbols(c, mc_symbols, cfg.seeds.symbols)
        y = transmit_symbols(sy, ch, det, cfg.seeds.channel)
        stats = general_statistics(sy.labels, y, c.probabilities)
        save_statistics(out / "keyrate" / "general_statistics.csv", stats, c.probabilities,
                        _header(cfg, n=mc_symbols))
        gen = step_keyrate(cfg, out / "keyrate", out / "keyrate" / "general_statistics.csv", name="general")
        summary.update({"general_r_infty": gen.r_infty, "general_r_system_kbps": gen.r_system / 1e3,
                        "general_gap": gen.gap, "reference_general_kbps": REFERENCE_GENERAL_KBPS,
                        "mc_symbols": mc_symbols})
    _write_json(out / "summary.json", summary)
    return summary


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, EstimationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DspError, SdpError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
