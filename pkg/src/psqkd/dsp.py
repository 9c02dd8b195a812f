"""Receiver DSP chain: frequency-offset estimation through DC block.

Order of stages in :func:`run_pipeline`:

1. frequency-offset estimation on the reference tone,
2. frequency shift of the reference onto the quantum band centre,
3. brick-wall band filters for both signals,
4. carrier recovery by the unit-modulus conjugate of the filtered reference,
5. resampling to 4 samples per symbol and RRC matched filtering,
6. training superposition and variable step-size LMS fractionally spaced
   equalisation (one output per symbol),
7. DC block.

The chain is linear up to the equaliser adaptation and the carrier
normalisation, so a vacuum and a dark capture pushed through the same
(frozen) chain give the shot-noise calibration of the outputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .channel import FrameConfig, WaveformBlock, frame_layout, rrc_taps, training_sequence
from .estimation import calibrate


class DspError(RuntimeError):
    pass


class StageError(DspError):
    def __init__(self, stage: str, block_index: int, cause: Exception):
        super().__init__(f"stage '{stage}' failed on block {block_index}: {cause}")
        self.stage = stage
        self.block_index = block_index
        self.cause = cause


@dataclass(frozen=True)
class EqualizerConfig:
    taps: int = 25
    input_sps: int = 4
    mu_min: float = 0.002
    mu_max: float = 0.05
    sigmoid_gain: float = 1.0
    train_superposition: int = 192
    epochs: int = 30
    divergence_window: int = 256

    def __post_init__(self):
        if self.taps < 1 or self.taps % 2 == 0:
            raise ValueError("taps must be a positive odd integer")
        if not 0 < self.mu_min <= self.mu_max:
            raise ValueError("need 0 < mu_min <= mu_max")
        if self.train_superposition < 1:
            raise ValueError("train_superposition must be >= 1")


@dataclass(frozen=True)
class DspConfig:
    equalizer: EqualizerConfig = EqualizerConfig()
    quantum_bandwidth: float = 1.3        # in units of the symbol rate
    reference_bandwidth: float = 0.1      # in units of the symbol rate; must pass the laser phase noise
    target_sps: int = 4
    zero_pad: int = 4
    min_peak_ratio: float = 20.0
    min_reference_envelope: float = 1e-9


@dataclass
class RecoveredSymbols:
    values: np.ndarray
    training_mask: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    error_trace: np.ndarray | None = None
    taps: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, complex)
        self.training_mask = np.asarray(self.training_mask, bool)
        if self.values.shape != self.training_mask.shape:
            raise ValueError("mask length must match values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("recovered symbols contain non-finite values")

    @property
    def payload(self) -> np.ndarray:
        return self.values[~self.training_mask]


# ---------------------------------------------------------------------------
# stages


def estimate_frequency_offset(reference: WaveformBlock, zero_pad: int = 4,
                              min_peak_ratio: float = 20.0) -> float:
    """Frequency of the dominant tone: zero-padded periodogram peak with quadratic refinement."""
    x = reference.samples
    nfft = int(2 ** np.ceil(np.log2(len(x) * zero_pad)))
    spec = np.abs(np.fft.fft(x * np.hanning(len(x)), nfft)) ** 2
    k = int(np.argmax(spec))
    if spec[k] <= 0 or spec[k] < min_peak_ratio * np.median(spec):
        raise DspError("no dominant spectral peak in the reference")
    lo, mid, hi = np.log(spec[[(k - 1) % nfft, k, (k + 1) % nfft]] + 1e-300)
    denom = lo - 2 * mid + hi
    frac = 0.5 * (lo - hi) / denom if denom != 0 else 0.0
    f = (k + frac) * reference.sample_rate / nfft
    if f >= reference.sample_rate / 2:
        f -= reference.sample_rate
    return float(f)


def frequency_shift(block: WaveformBlock, df: float) -> WaveformBlock:
    t = np.arange(len(block)) / block.sample_rate
    return block.replace(block.samples * np.exp(2j * np.pi * df * t))


def band_filter(block: WaveformBlock, bandwidth: float, center: float = 0.0) -> WaveformBlock:
    """Ideal filter keeping ``|f - center| <= bandwidth / 2`` (frequencies wrap modulo the sample rate)."""
    fs = block.sample_rate
    if bandwidth > fs:
        raise DspError("filter bandwidth exceeds the sampled band")
    if bandwidth >= fs:
        return block.replace(block.samples.copy())
    f = np.fft.fftfreq(len(block), 1 / fs)
    off = (f - center + fs / 2) % fs - fs / 2
    spec = np.fft.fft(block.samples)
    spec[np.abs(off) > bandwidth / 2] = 0.0
    return block.replace(np.fft.ifft(spec))


def carrier_recovery(quantum: WaveformBlock, reference: WaveformBlock,
                     min_envelope: float = 1e-9) -> tuple[WaveformBlock, np.ndarray]:
    """Multiply by the conjugate unit phasor of the reference; also returns that phasor."""
    env = np.abs(reference.samples)
    if env.size == 0 or np.min(env) <= min_envelope * max(np.max(env), 1e-300):
        raise DspError("reference envelope too small for carrier recovery")
    phasor = np.conj(reference.samples) / env
    return quantum.replace(quantum.samples * phasor), phasor


def resample_matched_filter(block: WaveformBlock, input_sps: int, target_sps: int = 4,
                            rolloff: float = 0.3, span: int = 16) -> WaveformBlock:
    """Rational resampling to ``target_sps`` followed by a unit-energy RRC matched filter.

    Output sample ``target_sps * k`` is the matched-filter output at symbol ``k``.
    """
    ratio = Fraction(target_sps, input_sps)
    if ratio.denominator > 64 or ratio.numerator > 64:
        raise DspError(f"unsupported resampling ratio {ratio}")
    x = block.samples
    if ratio != 1:
        x = signal.resample_poly(x, ratio.numerator, ratio.denominator)
    h = rrc_taps(rolloff, target_sps, span)
    y = np.convolve(x, h)
    delay = (len(h) - 1) // 2
    y = y[delay:delay + len(x)]
    return WaveformBlock(y, block.sample_rate * ratio, {**block.tags, "sps": target_sps})


def dc_block(symbols: np.ndarray, offset: complex | None = None) -> np.ndarray:
    """Remove a constant offset: ``offset`` when given, otherwise the sample mean."""
    s = np.asarray(symbols, complex)
    return s - (s.mean() if offset is None else offset)


def estimate_dc(outputs: np.ndarray, expected: np.ndarray) -> complex:
    """Mean residual of equalised training symbols against their known targets.

    Unlike the payload sample mean, this does not absorb the finite-sample mean
    of the random payload symbols.
    """
    return complex(np.mean(np.asarray(outputs) - np.asarray(expected)))


def superpose_training(samples: np.ndarray, starts: np.ndarray, length: int, count: int,
                       expected: np.ndarray | None = None, sps: int = 4,
                       min_correlation: float = 0.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Coherent averages of ``count`` consecutive training windows.

    ``starts`` are the sample offsets of successive training windows of
    ``length`` samples.  Returns ``(average, group_starts)`` per group.  When
    ``expected`` symbols are given, the average sampled at symbol instants
    must correlate with them by at least ``min_correlation``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    starts = np.asarray(starts)
    groups = []
    for g in range(0, len(starts) - count + 1, count):
        idx = starts[g:g + count]
        if idx[-1] + length > len(samples) or idx[0] < 0:
            break
        stack = np.stack([samples[i:i + length] for i in idx])
        avg = stack.mean(axis=0)
        groups.append((avg, idx))
    if not groups:
        raise DspError("not enough training repetitions for the requested superposition")
    if expected is not None and min_correlation > 0:
        for avg, _ in groups:
            c = _symbol_correlation(avg, expected, sps)
            if c < min_correlation:
                raise DspError(f"training period mismatch (correlation {c:.3f})")
    return groups


def _symbol_correlation(window, expected, sps):
    n = len(expected)
    pad = (len(window) - sps * n) // 2
    s = window[pad:pad + sps * n:sps]
    return float(np.abs(np.vdot(expected, s)) / (np.linalg.norm(expected) * np.linalg.norm(s) + 1e-300))


def step_size(err_power, cfg: EqualizerConfig):
    """Sigmoid step-size law: ``mu_min`` at zero error, approaching ``mu_max`` for large errors."""
    s = 2.0 / (1.0 + np.exp(-cfg.sigmoid_gain * np.asarray(err_power))) - 1.0
    return cfg.mu_min + (cfg.mu_max - cfg.mu_min) * s


def _windows(samples, centers, taps):
    half = taps // 2
    padded = np.concatenate([np.zeros(half, complex), samples, np.zeros(half, complex)])
    idx = np.asarray(centers)[:, None] + np.arange(taps)[None, :]
    return padded[idx]


def vs_lms_equalize(train: list[tuple[np.ndarray, np.ndarray]], cfg: EqualizerConfig,
                    taps0: np.ndarray | None = None, fixed_mu: float | None = None,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Train complex FIR taps on ``(window_samples, desired_symbols)`` pairs.

    Each pair holds a sample stream at ``cfg.input_sps`` samples per symbol
    whose symbol ``k`` is centred at ``pad + k * input_sps`` with ``pad`` the
    symmetric margin.  Updates are normalised LMS with the sigmoid step law
    (or ``fixed_mu``).  Returns the taps and the per-update error power trace.
    """
    sps = cfg.input_sps
    w = np.zeros(cfg.taps, complex) if taps0 is None else np.array(taps0, complex)
    if taps0 is None:
        w[cfg.taps // 2] = 1.0
    data = []
    for window, desired in train:
        pad = (len(window) - sps * len(desired)) // 2
        centers = pad + sps * np.arange(len(desired))
        data.append((_windows(window, centers, cfg.taps), np.asarray(desired, complex)))
    trace = []
    recent = []
    for _ in range(cfg.epochs):
        for U, d in data:
            for u, dn in zip(U, d):
                y = np.vdot(w, u)
                e = dn - y
                p = (e * e.conjugate()).real
                mu = fixed_mu if fixed_mu is not None else step_size(p / (abs(dn) ** 2 + 1e-300), cfg)
                w = w + mu * np.conj(e) * u / (np.vdot(u, u).real + 1e-300)
                trace.append(p)
                recent.append(p)
        n = cfg.divergence_window
        if len(recent) >= 2 * n and np.mean(recent[-n:]) > 1e3 * np.mean(recent[:n]):
            raise DspError("equalizer diverged")
    return w, np.asarray(trace)


def apply_equalizer(samples: np.ndarray, taps: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """One output per symbol: ``w^H u`` with ``u`` the tap window centred at each sample index."""
    U = _windows(samples, centers, len(taps))
    return U @ np.conj(taps)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ChainState:
    """Quantities fixed by the signal run and reused for calibration captures."""

    phasor: np.ndarray
    center: float
    taps: list
    group_of_symbol: np.ndarray
    dc_offset: complex = 0j


def _front_end(quantum, reference, frame: FrameConfig, cfg: DspConfig, diag):
    f_ref = estimate_frequency_offset(reference, cfg.zero_pad, cfg.min_peak_ratio)
    diag["frequency_offset_estimation"] = {"f_ref_hz": f_ref}
    ref = frequency_shift(reference, -frame.reference_separation)
    center = f_ref - frame.reference_separation
    diag["frequency_shift"] = {"shift_hz": -frame.reference_separation}
    q = band_filter(quantum, cfg.quantum_bandwidth * frame.symbol_rate, center)
    ref = band_filter(ref, cfg.reference_bandwidth * frame.symbol_rate, center)
    diag["band_filter"] = {"quantum_bw_hz": cfg.quantum_bandwidth * frame.symbol_rate,
                           "reference_bw_hz": cfg.reference_bandwidth * frame.symbol_rate}
    return q, ref, center


def _baseband(q: WaveformBlock, phasor, frame: FrameConfig, cfg: DspConfig):
    bb = q.replace(q.samples * phasor)
    return resample_matched_filter(bb, frame.samples_per_symbol, cfg.target_sps, frame.rolloff,
                                   frame.rrc_span)


def run_pipeline(quantum: WaveformBlock, reference: WaveformBlock, frame: FrameConfig,
                 cfg: DspConfig = DspConfig(), n_payload: int | None = None,
                 avg_symbol_power: float | None = None, block_index: int = 0,
                 ) -> tuple[RecoveredSymbols, ChainState]:
    """Recover one output per symbol (raw units) from received waveforms.

    ``n_payload`` is the number of quantum symbols in the frame (defaults to the
    value recorded in the waveform tags).  ``avg_symbol_power`` sets the
    training amplitude as in the transmitter.
    """
    diag: dict = {}
    stage = "frequency_offset_estimation"
    try:
        q, ref, center = _front_end(quantum, reference, frame, cfg, diag)
        stage = "carrier_recovery"
        _, phasor = carrier_recovery(q, ref, cfg.min_reference_envelope)
        stage = "resample_matched_filter"
        mf = _baseband(q, phasor, frame, cfg)
        diag[stage] = {"sps": cfg.target_sps, "rms": float(np.sqrt(np.mean(np.abs(mf.samples) ** 2)))}
        stage = "superposition"
        n_pay = int(n_payload if n_payload is not None else quantum.tags["n_payload"])
        mask = frame_layout(frame, n_pay)
        sps = cfg.target_sps
        eq = cfg.equalizer
        p_avg = avg_symbol_power if avg_symbol_power is not None else quantum.tags.get("avg_symbol_power")
        if p_avg is None:
            raise DspError("average symbol power unknown; pass avg_symbol_power")
        training = training_sequence(frame, float(p_avg))
        L = frame.training_length
        margin = eq.taps // 2 + sps
        period = frame.training_period * sps
        periods = mask.size // frame.training_period
        starts = np.arange(periods) * period - margin
        valid = starts >= 0
        count = min(eq.train_superposition, int(valid.sum()))
        groups = superpose_training(mf.samples, starts[valid], L * sps + 2 * margin, count,
                                    training, sps)
        # gain reference from the enhanced training at symbol instants
        sym_pos = margin + sps * np.arange(L)
        g_hat = np.mean([np.vdot(training, avg[sym_pos]) / np.vdot(training, training)
                         for avg, _ in groups])
        diag["superposition"] = {"count": count, "groups": len(groups), "gain_abs": float(abs(g_hat))}
        stage = "equalizer"
        taps_list, traces = [], []
        # start from the phase/gain correction implied by the superposition estimate
        w = np.zeros(eq.taps, complex)
        w[eq.taps // 2] = g_hat / abs(g_hat)
        # symbols whose tap window reaches the averaged-out payload neighbours are skipped
        edge = eq.taps // (2 * sps) + 1
        for avg, _ in groups:
            pair = (avg[edge * sps:len(avg) - edge * sps], abs(g_hat) * training[edge:L - edge])
            w, tr = vs_lms_equalize([pair], eq, taps0=w)
            taps_list.append(w)
            traces.append(tr)
        # each symbol uses the taps of the group covering it (last group for the tail)
        period_index = np.arange(mask.size) // frame.training_period
        group_len = count
        group_of_symbol = np.minimum(period_index // group_len, len(taps_list) - 1)
        out = np.empty(mask.size, complex)
        centers = sps * np.arange(mask.size)
        for gi, taps in enumerate(taps_list):
            sel = group_of_symbol == gi
            out[sel] = apply_equalizer(mf.samples, taps, centers[sel])
        trace = np.concatenate(traces)
        diag["equalizer"] = {"final_error_power": float(np.mean(trace[-(L - 2 * edge):])),
                             "updates": int(trace.size)}
        stage = "dc_block"
        expected = abs(g_hat) * np.tile(training, periods)
        dc = estimate_dc(out[mask], expected)
        out = dc_block(out, dc)
        diag["dc_block"] = {"offset_re": dc.real, "offset_im": dc.imag}
        rec = RecoveredSymbols(out, mask, diag, trace, np.array(taps_list))
    except DspError as exc:
        raise StageError(stage, block_index, exc) from exc
    return rec, ChainState(phasor, center, taps_list, group_of_symbol, dc)


def replay_chain(block: WaveformBlock, state: ChainState, frame: FrameConfig, mask: np.ndarray,
                 cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Push a calibration capture through the frozen chain of a previous run (payload slots only)."""
    q = band_filter(block, cfg.quantum_bandwidth * frame.symbol_rate, state.center)
    mf = _baseband(q, state.phasor[:len(q)], frame, cfg)
    centers = cfg.target_sps * np.arange(mask.size)
    out = np.empty(mask.size, complex)
    for gi, taps in enumerate(state.taps):
        sel = state.group_of_symbol == gi
        out[sel] = apply_equalizer(mf.samples, taps, centers[sel])
    return dc_block(out[~mask])


def calibrated_payload(rec: RecoveredSymbols, state: ChainState, vacuum: WaveformBlock,
                       dark: WaveformBlock, frame: FrameConfig, cfg: DspConfig = DspConfig(),
                       n_payload: int | None = None):
    """Payload in SNU using vacuum and dark captures replayed through the frozen chain.

    Returns ``(payload_snu, CalibrationResult)``.
    """
    vac = replay_chain(vacuum, state, frame, rec.training_mask, cfg)
    drk = replay_chain(dark, state, frame, rec.training_mask, cfg)
    cal = calibrate(vac, drk)
    payload = rec.payload if n_payload is None else rec.payload[:n_payload]
    return cal.to_snu(payload), cal


def write_diagnostics(path: str | Path, rec: RecoveredSymbols) -> None:
    """CSV with one row per (stage, metric)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "metric", "value"])
        for stage, metrics in rec.diagnostics.items():
            for k, v in metrics.items():
                w.writerow([stage, k, v])
