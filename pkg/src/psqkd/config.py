"""Campaign configuration: a versioned YAML document mapped onto nested dataclasses.

Every field has a type; unknown keys, missing required keys and type
mismatches raise :class:`ConfigError` naming the dotted field path.
"""
from __future__ import annotations

import copy
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel import ChannelParams, FrameConfig, config_hash
from .dsp import DspConfig, EqualizerConfig
from .fockspace import DetectorParams
from .keyrate import RateContext

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "PSQKD_OUTPUT_ROOT"
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ConstellationBlock:
    nu: float = REQUIRED
    va: float = REQUIRED


@dataclass(frozen=True)
class ChannelBlock:
    xi: float = REQUIRED
    T: float | None = None
    length_km: float | None = None
    alpha_db_per_km: float = 0.162
    lengths_km: list = field(default_factory=lambda: [0.0, 25.0, 50.0, 80.0, 100.0, 126.56])
    residual_gain_abs: float = 1.0
    residual_gain_phase: float = 0.0


@dataclass(frozen=True)
class DetectorBlock:
    eta_d: float = REQUIRED
    nu_el: float = REQUIRED
    n_cutoff: int = 12


@dataclass(frozen=True)
class FrameBlock:
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


@dataclass(frozen=True)
class EqualizerBlock:
    taps: int = 25
    mu_min: float = 0.002
    mu_max: float = 0.05
    sigmoid_gain: float = 1.0
    train_superposition: int = 192
    epochs: int = 30


@dataclass(frozen=True)
class DspBlock:
    quantum_bandwidth: float = 1.3
    reference_bandwidth: float = 0.1
    equalizer: EqualizerBlock = EqualizerBlock()


@dataclass(frozen=True)
class KeyrateBlock:
    beta: float = 0.95
    fer: float = 0.15
    a: float = 0.1
    b: float = 0.25
    symbol_rate: float = 1e9
    delta0: float = 0.6
    delta0_grid: list = field(default_factory=lambda: [0.0, 0.035, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    tol_gap: float = 1e-5
    max_iter: int = 60
    eps: float = 1e-9


@dataclass(frozen=True)
class SimulationBlock:
    n_symbols: int = 100_000
    estimation_fraction: float = 0.1


@dataclass(frozen=True)
class SeedsBlock:
    symbols: int = 1
    channel: int = 2
    vacuum: int = 3
    dark: int = 4
    estimation: int = 5


@dataclass(frozen=True)
class CampaignConfig:
    schema_version: int = REQUIRED
    constellation: ConstellationBlock = REQUIRED
    channel: ChannelBlock = REQUIRED
    detector: DetectorBlock = REQUIRED
    frame: FrameBlock = FrameBlock()
    dsp: DspBlock = DspBlock()
    keyrate: KeyrateBlock = KeyrateBlock()
    simulation: SimulationBlock = SimulationBlock()
    seeds: SeedsBlock = SeedsBlock()
    output_dir: str = "run"

    # -- derived objects -------------------------------------------------

    def transmittance(self) -> float:
        ch = self.channel
        if ch.T is not None:
            return float(ch.T)
        return ChannelParams.from_length(ch.length_km, ch.xi, ch.alpha_db_per_km).T

    def channel_params(self) -> ChannelParams:
        return ChannelParams(self.transmittance(), self.channel.xi)

    def detector_params(self) -> DetectorParams:
        d = self.detector
        return DetectorParams(d.eta_d, d.nu_el, d.n_cutoff)

    def frame_config(self) -> FrameConfig:
        return FrameConfig(**dataclasses.asdict(self.frame))

    def dsp_config(self) -> DspConfig:
        eq = EqualizerConfig(**dataclasses.asdict(self.dsp.equalizer))
        return DspConfig(equalizer=eq, quantum_bandwidth=self.dsp.quantum_bandwidth,
                         reference_bandwidth=self.dsp.reference_bandwidth)

    def rate_context(self) -> RateContext:
        k = self.keyrate
        return RateContext(nu=self.constellation.nu, va=self.constellation.va, T=self.transmittance(),
                           xi=self.channel.xi, eta_d=self.detector.eta_d, nu_el=self.detector.nu_el,
                           n_cutoff=self.detector.n_cutoff, delta0=k.delta0, beta=k.beta, fer=k.fer,
                           a=k.a, b=k.b, symbol_rate=k.symbol_rate, tol_gap=k.tol_gap,
                           max_iter=k.max_iter, eps=k.eps, length_km=self.channel.length_km,
                           fiber_loss_db_per_km=self.channel.alpha_db_per_km)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of everything that affects results (the output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return config_hash(d)

    def output_path(self, override: str | Path | None = None) -> Path:
        base = Path(override) if override is not None else Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not base.is_absolute():
            base = Path(root) / base
        return base


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(path, "expected a list of numbers")
        return [float(v) for v in value]
    raise ConfigError(path, f"unsupported field type {_type_name(tp)}")


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping for {cls.__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], sub)
        elif f.default is REQUIRED:
            raise ConfigError(sub, "missing required field")
    return cls(**kwargs)


def _validate(cfg: CampaignConfig) -> None:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {cfg.schema_version} (expected {SCHEMA_VERSION})")
    ch = cfg.channel
    if (ch.T is None) == (ch.length_km is None):
        raise ConfigError("channel", "give exactly one of T and length_km")
    checks = [
        ("constellation.nu", cfg.constellation.nu >= 0, "must be non-negative"),
        ("constellation.va", cfg.constellation.va > 0, "must be positive"),
        ("channel.xi", ch.xi >= 0, "must be non-negative"),
        ("channel.T", ch.T is None or 0 < ch.T <= 1, "must lie in (0, 1]"),
        ("channel.length_km", ch.length_km is None or ch.length_km >= 0, "must be non-negative"),
        ("detector.eta_d", 0 < cfg.detector.eta_d <= 1, "must lie in (0, 1]"),
        ("detector.nu_el", cfg.detector.nu_el >= 0, "must be non-negative"),
        ("detector.n_cutoff", cfg.detector.n_cutoff >= 1, "must be >= 1"),
        ("keyrate.beta", 0 <= cfg.keyrate.beta <= 1, "must lie in [0, 1]"),
        ("keyrate.fer", 0 <= cfg.keyrate.fer <= 1, "must lie in [0, 1]"),
        ("keyrate.a", cfg.keyrate.a >= 0 and cfg.keyrate.a + cfg.keyrate.b <= 1, "need 0 <= a and a + b <= 1"),
        ("keyrate.delta0_grid", len(cfg.keyrate.delta0_grid) > 0, "must not be empty"),
        ("simulation.n_symbols", cfg.simulation.n_symbols > 0, "must be positive"),
        ("simulation.estimation_fraction", 0 < cfg.simulation.estimation_fraction <= 1, "must lie in (0, 1]"),
    ]
    for path, ok, msg in checks:
        if not ok:
            raise ConfigError(path, msg)
    for name, build in [("frame", cfg.frame_config), ("dsp", cfg.dsp_config)]:
        try:
            build()
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from exc


def config_from_dict(data: dict) -> CampaignConfig:
    cfg = _build(CampaignConfig, data, "")
    _validate(cfg)
    return cfg


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path does not name a block")
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> CampaignConfig:
    """Read a YAML config (or start from :func:`default_config_dict`) and apply dotted overrides."""
    if path is None:
        data = default_config_dict()
    else:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError("", f"{path}: not valid YAML ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError("", f"{path}: top level must be a mapping")
    data = copy.deepcopy(data)
    recorded = data.pop("config_hash", None)
    for key, value in (overrides or {}).items():
        _set_path(data, key, value)
    cfg = config_from_dict(data)
    if recorded is not None and not overrides and recorded != cfg.hash():
        raise ConfigError("config_hash", f"recorded hash {recorded} does not match contents ({cfg.hash()})")
    return cfg


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value`` with the value parsed as YAML (numbers, lists, null)."""
    if "=" not in text:
        raise ConfigError("", f"override '{text}' must have the form key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def default_config_dict() -> dict:
    """The operating point of the reference experiment, with a desk-scale waveform frame."""
    return {
        "schema_version": SCHEMA_VERSION,
        "constellation": {"nu": 0.2, "va": 2.03},
        "channel": {"xi": 0.019, "T": 0.009},
        "detector": {"eta_d": 0.714, "nu_el": 0.064, "n_cutoff": 12},
    }


def dump_config(cfg: CampaignConfig) -> str:
    return yaml.safe_dump({**cfg.to_dict(), "config_hash": cfg.hash()}, sort_keys=False)
