"""Scenario configuration: dataclass, ``key = value`` file parser and presets.

Config file schema (one ``key = value`` per line, ``#`` starts a comment,
unknown keys are rejected)::

    n_subcarriers = 8            # N
    n_blocks = 8                 # K
    subcarrier_spacing_hz = 15e3 # f0
    carrier_hz = 150e9           # fc
    periodic_doppler = true
    n_targets = 3                # L
    delay_range_t0 = 3           # delays drawn on [0, 3 T0]
    doppler_range_f0 = 4         # Dopplers drawn on [-4 f0, 4 f0]
    max_velocity_kmh = 300       # alternative to doppler_range_f0
    grid_delay = 32              # P
    grid_doppler = 32            # Q
    snr_db = 0:5:20              # min:step:max or a comma list
    n_trials = 200
    seed = 0
    methods = two_layer,two_stage,fft_coarse
    outer_max_iter = 50          # two-layer outer budget
    inner_max_iter = 10          # second-layer / single-layer VBI budget
    vbi_max_iter = 167           # budget of the other VBI solves
    vbi_tol = 1e-5
    gamma_shape = 1e-4
    gamma_rate = 1e-4
    beta_mode = variance
    summation_variant = slice_sum
    compute_crb = true
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

from ..channel import SystemConfig, doppler_from_velocity

METHODS = ("two_layer", "two_stage", "classical_vbi", "perfect_vbi_delay", "perfect_vbi_doppler",
           "fft_coarse", "summation_music", "stacking_music")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class ScenarioConfig:
    n_subcarriers: int = 8
    n_blocks: int = 8
    subcarrier_spacing_hz: float = 15e3
    carrier_hz: float = 150e9
    periodic_doppler: bool = True
    n_targets: int = 3
    delay_range_t0: float = 3.0
    doppler_range_f0: float = 4.0
    max_velocity_kmh: float | None = None
    grid_delay: int = 32
    grid_doppler: int = 32
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_trials: int = 200
    seed: int = 0
    methods: tuple = ("two_layer", "two_stage", "fft_coarse")
    outer_max_iter: int = 50
    inner_max_iter: int = 10
    vbi_max_iter: int = 167
    vbi_tol: float = 1e-5
    gamma_shape: float = 1e-4
    gamma_rate: float = 1e-4
    beta_mode: str = "variance"
    summation_variant: str = "slice_sum"
    compute_crb: bool = True

    def __post_init__(self):
        if self.n_targets < 1:
            raise ConfigError("n_targets must be at least 1")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        if not 0 < self.delay_range_t0 < self.n_subcarriers:
            raise ConfigError("delay range must lie in (0, 1/f0), i.e. (0, N) in units of T0")
        if self.grid_delay < 1 or self.grid_doppler < 1:
            raise ConfigError("grid sizes must be positive")
        if not self.snr_db:
            raise ConfigError("snr_db is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        if self.beta_mode not in ("point", "variance", "tied"):
            raise ConfigError(f"unknown beta_mode {self.beta_mode!r}")
        if self.summation_variant not in ("slice_sum", "correlation_sum"):
            raise ConfigError(f"unknown summation_variant {self.summation_variant!r}")
        for k in ("outer_max_iter", "inner_max_iter", "vbi_max_iter"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be at least 1")
        if not (self.vbi_tol > 0 and self.gamma_shape > 0 and self.gamma_rate > 0):
            raise ConfigError("vbi_tol, gamma_shape and gamma_rate must be positive")
        try:
            self.system
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def system(self) -> SystemConfig:
        return SystemConfig(self.n_subcarriers, self.n_blocks, self.subcarrier_spacing_hz,
                            self.carrier_hz, periodic_doppler=self.periodic_doppler)

    @property
    def delay_range_s(self) -> float:
        return self.delay_range_t0 * self.system.sample_period_s

    @property
    def doppler_range_hz(self) -> float:
        if self.max_velocity_kmh is not None:
            return doppler_from_velocity(self.max_velocity_kmh / 3.6, self.carrier_hz)
        return self.doppler_range_f0 * self.subcarrier_spacing_hz


PRESETS = {
    "fig3": {},
    "fig4": {"n_subcarriers": 16, "n_blocks": 32},
    "fig5": {"snr_db": (15.0,)},
    "fig6": {"max_velocity_kmh": 300.0, "methods": ("two_layer", "two_stage")},
    "fig8": {"methods": ("stacking_music", "summation_music"), "compute_crb": False},
}


def parse_snr(text: str) -> tuple:
    """``"min:step:max"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, step, hi = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise ConfigError(f"bad SNR range {text!r}")
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return tuple(float(lo + i * step) for i in range(n))
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad SNR specification {text!r}") from exc


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(ScenarioConfig)}
    kind = kinds[name]
    raw = raw.strip()
    try:
        if name == "snr_db":
            return parse_snr(raw)
        if name == "methods":
            return tuple(m.strip() for m in raw.split(",") if m.strip())
        if name == "max_velocity_kmh":
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError(raw)
            return int(v)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into typed overrides."""
    known = {f.name for f in fields(ScenarioConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, preset: str | None = None, **overrides) -> ScenarioConfig:
    """Preset, then config file, then explicit overrides (``None`` values skipped)."""
    base = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base.update(PRESETS[preset])
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                base.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
