"""Channel and transceiver simulation.

Two fidelities share one noise model.  At symbol level each quadrature of the
transmitted SNU value ``x`` (``2 Re alpha``, ``2 Im alpha``) arrives as

    y = sqrt(eta_d T / 2) x + noise,   var(noise) = eta_d T xi / 2 + 1 + nu_el.

At waveform level the same symbols are RRC pulse shaped, interleaved with
periodic QPSK training blocks, attenuated, rotated by laser phase noise and a
frequency offset, and received with white noise at the shot-noise level, next
to a single-tone reference that carries the same phase noise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .constellation import LabeledSymbols
from .fockspace import DetectorParams


@dataclass(frozen=True)
class ChannelParams:
    T: float
    xi: float = 0.0
    fiber_loss_db_per_km: float = 0.162
    length_km: float | None = None

    def __post_init__(self):
        if self.length_km is not None:
            expected = transmittance(self.length_km, self.fiber_loss_db_per_km)
            if abs(self.T - expected) > 1e-12:
                raise ValueError(f"T={self.T} inconsistent with {self.length_km} km "
                                 f"at {self.fiber_loss_db_per_km} dB/km (expected {expected})")
        if not 0 < self.T <= 1:
            raise ValueError("T must lie in (0, 1]")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")

    @classmethod
    def from_length(cls, length_km: float, xi: float, fiber_loss_db_per_km: float = 0.162):
        return cls(transmittance(length_km, fiber_loss_db_per_km), xi, fiber_loss_db_per_km, length_km)

    @property
    def loss_db(self) -> float:
        return -10 * np.log10(self.T)


def transmittance(length_km: float, loss_db_per_km: float) -> float:
    return float(10 ** (-loss_db_per_km * length_km / 10))


def noise_variance(ch: ChannelParams, det: DetectorParams) -> float:
    """Per-quadrature variance of the additive noise, SNU."""
    return det.eta_d * ch.T * ch.xi / 2 + 1 + det.nu_el


def transmit_symbols(x: LabeledSymbols, ch: ChannelParams, det: DetectorParams, seed: int) -> np.ndarray:
    """Bob's heterodyne outcomes: complex array whose real/imag parts are the SNU quadratures."""
    rng = np.random.default_rng(seed)
    xs = 2 * np.asarray(x.values, dtype=complex)
    sigma = np.sqrt(noise_variance(ch, det))
    noise = sigma * (rng.standard_normal(xs.size) + 1j * rng.standard_normal(xs.size))
    return np.sqrt(0.5 * det.eta_d * ch.T) * xs + noise


def snu_to_nu(zeta_snu) -> np.ndarray:
    """Outcomes in natural units, as used by the key map."""
    return np.asarray(zeta_snu) / np.sqrt(2)


# ---------------------------------------------------------------------------
# waveform level


@dataclass(frozen=True)
class FrameConfig:
    symbol_rate: float = 1e6
    samples_per_symbol: int = 8
    rolloff: float = 0.3
    training_ratio: float = 0.25
    training_power_gain: float = 16.0
    training_period: int = 256
    freq_offset: float = 1.5e6
    reference_separation: float = 0.75e6
    linewidth: float = 100.0
    reference_power: float = 100.0
    rrc_span: int = 64
    training_seed: int = 20240601

    def __post_init__(self):
        if not 0 < self.rolloff <= 1:
            raise ValueError("rolloff must lie in (0, 1]")
        if not 0 <= self.training_ratio < 1:
            raise ValueError("training_ratio must lie in [0, 1)")
        if self.samples_per_symbol < 2 or self.training_period < 1:
            raise ValueError("samples_per_symbol >= 2 and training_period >= 1 required")
        f_hi = abs(self.freq_offset) + 0.5 * (1 + self.rolloff) * self.symbol_rate
        if f_hi >= self.sample_rate / 2:
            raise ValueError("frequency plan exceeds the Nyquist band")

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol

    @property
    def training_length(self) -> int:
        return int(round(self.training_ratio * self.training_period))

    @property
    def payload_length(self) -> int:
        return self.training_period - self.training_length

    @property
    def quantum_center(self) -> float:
        """Centre frequency of the quantum band; the reference sits ``reference_separation`` above."""
        return self.freq_offset - self.reference_separation

    def hash(self) -> str:
        return config_hash(asdict(self))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class WaveformBlock:
    samples: np.ndarray
    sample_rate: float
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    def replace(self, samples, **tags) -> "WaveformBlock":
        return WaveformBlock(samples, self.sample_rate, {**self.tags, **tags})

    def save(self, path: str | Path, header: dict | None = None) -> None:
        """Little-endian float32 interleaved I/Q plus a ``.json`` sidecar header."""
        path = Path(path)
        iq = np.empty(2 * len(self.samples), dtype="<f4")
        iq[0::2] = self.samples.real
        iq[1::2] = self.samples.imag
        path.write_bytes(iq.tobytes())
        meta = {"sample_rate": self.sample_rate, "n_samples": len(self.samples),
                "tags": self.tags, **(header or {})}
        sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))

    @classmethod
    def load(cls, path: str | Path) -> "WaveformBlock":
        path = Path(path)
        meta = json.loads(sidecar(path).read_text())
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        if raw.size != 2 * meta["n_samples"]:
            raise OSError(f"{path}: expected {2 * meta['n_samples']} floats, found {raw.size}")
        return cls(raw[0::2] + 1j * raw[1::2], float(meta["sample_rate"]), meta.get("tags", {}))


def sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def rrc_taps(rolloff: float, sps: int, span: int) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response over ``span`` symbols."""
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1 - b + 4 * b / np.pi
        elif b > 0 and abs(abs(ti) - 1 / (4 * b)) < 1e-12:
            h[i] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                     + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            h[i] = (np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))) / \
                   (np.pi * ti * (1 - (4 * b * ti) ** 2))
    return h / np.sqrt(np.sum(h**2))


def training_sequence(cfg: FrameConfig, avg_symbol_power: float) -> np.ndarray:
    """The fixed QPSK training block, power ``training_power_gain * avg_symbol_power``."""
    rng = np.random.default_rng(cfg.training_seed)
    amp = np.sqrt(cfg.training_power_gain * avg_symbol_power / 2)
    bits = rng.integers(0, 2, size=(cfg.training_length, 2))
    return amp * ((2 * bits[:, 0] - 1) + 1j * (2 * bits[:, 1] - 1))


def frame_layout(cfg: FrameConfig, n_payload: int) -> np.ndarray:
    """Boolean training mask over the interleaved symbol stream (whole periods)."""
    periods = max(1, -(-n_payload // cfg.payload_length))
    mask = np.zeros(periods * cfg.training_period, dtype=bool)
    for k in range(periods):
        mask[k * cfg.training_period:k * cfg.training_period + cfg.training_length] = True
    return mask


def interleave(payload: np.ndarray, training: np.ndarray, cfg: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Symbol stream with training blocks at the start of each period; unused payload slots are 0."""
    mask = frame_layout(cfg, len(payload))
    stream = np.zeros(mask.size, dtype=complex)
    periods = mask.size // cfg.training_period
    stream[mask] = np.tile(training, periods)
    slots = np.flatnonzero(~mask)
    stream[slots[:len(payload)]] = payload
    return stream, mask


def pulse_shape(stream: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Upsample and RRC filter; output aligned so symbol ``k`` peaks at sample ``k * sps``."""
    sps = cfg.samples_per_symbol
    h = rrc_taps(cfg.rolloff, sps, cfg.rrc_span)
    up = np.zeros(len(stream) * sps, dtype=complex)
    up[::sps] = stream
    full = np.convolve(up, h)
    delay = (len(h) - 1) // 2
    return full[delay:delay + len(up)]


def apply_link(block: WaveformBlock, ch: ChannelParams, residual_gain: complex = 1.0) -> WaveformBlock:
    """Amplitude scaling ``sqrt(T)`` times an optional static complex gain (polarisation residual)."""
    return block.replace(np.sqrt(ch.T) * residual_gain * block.samples, link_T=ch.T)


def wiener_phase(n: int, linewidth: float, sample_rate: float, rng) -> np.ndarray:
    step = np.sqrt(2 * np.pi * linewidth / sample_rate)
    return np.cumsum(step * rng.standard_normal(n))


def synthesize_frame(symbols: LabeledSymbols, cfg: FrameConfig, seed: int,
                     ch: ChannelParams | None = None, det: DetectorParams | None = None,
                     residual_gain: complex = 1.0, avg_symbol_power: float | None = None,
                     ) -> tuple[WaveformBlock, WaveformBlock]:
    """Received quantum and reference waveforms for a symbol sequence.

    Without ``ch`` and ``det`` the chain is noiseless with unit gain (for
    loopback checks).  With them, excess noise is added to the transmitted
    symbols, the link and the heterodyne split scale the field by
    ``sqrt(eta_d T / 2)``, and complex white noise of per-quadrature variance
    ``1 + nu_el`` is added per sample, which the unit-energy matched filter
    maps to the same per-symbol variance.  ``avg_symbol_power`` sets the
    training power reference (defaults to the mean of ``|2 alpha|^2``).
    """
    rng = np.random.default_rng(seed)
    x = 2 * np.asarray(symbols.values, dtype=complex)
    if ch is not None and ch.xi > 0:
        x = x + np.sqrt(ch.xi) * (rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size))
    p_avg = float(np.mean(np.abs(2 * np.asarray(symbols.values)) ** 2)) if avg_symbol_power is None \
        else avg_symbol_power
    training = training_sequence(cfg, p_avg)
    stream, mask = interleave(x, training, cfg)
    tx = WaveformBlock(pulse_shape(stream, cfg), cfg.sample_rate, {"kind": "quantum"})
    n = len(tx)
    if ch is not None:
        tx = apply_link(tx, ch, residual_gain)
    elif residual_gain != 1.0:
        tx = tx.replace(residual_gain * tx.samples)
    gain = np.sqrt(det.eta_d / 2) if det is not None else 1.0
    t = np.arange(n) / cfg.sample_rate
    phase = np.zeros(n)
    if cfg.linewidth > 0:
        phase = wiener_phase(n, cfg.linewidth, cfg.sample_rate, rng) \
            - wiener_phase(n, cfg.linewidth, cfg.sample_rate, rng)
    rot = np.exp(1j * phase)
    q = gain * tx.samples * rot * np.exp(2j * np.pi * cfg.quantum_center * t)
    ref = np.sqrt(cfg.reference_power) * rot * np.exp(2j * np.pi * cfg.freq_offset * t)
    if det is not None:
        s = np.sqrt(1 + det.nu_el)
        q = q + s * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        ref = ref + s * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    tags = {"seed": seed, "config_hash": cfg.hash(), "n_symbols": int(mask.size),
            "avg_symbol_power": p_avg,
            "n_payload": len(x)}
    return (WaveformBlock(q, cfg.sample_rate, {"kind": "quantum", **tags}),
            WaveformBlock(ref, cfg.sample_rate, {"kind": "reference", **tags}))


def synthesize_calibration(n_samples: int, cfg: FrameConfig, det: DetectorParams, seed: int,
                           kind: str = "vacuum") -> WaveformBlock:
    """Receiver noise capture with the signal blocked.

    ``kind="vacuum"`` (local oscillator on) has per-quadrature variance
    ``1 + nu_el`` per sample; ``kind="dark"`` (local oscillator off) ``nu_el``.
    """
    if kind not in ("vacuum", "dark"):
        raise ValueError("kind must be 'vacuum' or 'dark'")
    rng = np.random.default_rng(seed)
    var = det.nu_el + (1.0 if kind == "vacuum" else 0.0)
    z = np.sqrt(var) * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples))
    return WaveformBlock(z, cfg.sample_rate, {"kind": kind, "seed": seed, "config_hash": cfg.hash()})
