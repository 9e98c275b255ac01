"""Run configuration: every analysis constant as a named, documented default.

Config files are YAML with nesting mirroring the dataclass layout; scalar
top-level fields can also be overridden through ``NEEDLEMETRICS_<FIELD>``
environment variables (useful for seeds and job counts in batch runs).
"""

import os
from dataclasses import dataclass, field, fields

import yaml

from needlemetrics.segmentation import SegmentationParams
from needlemetrics.stats import DEFAULT_ALPHA, DEFAULT_TRANSFORMS

ENV_PREFIX = "NEEDLEMETRICS_"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    condition: str = "teleoperated"
    manifest: str = ""
    overrides: str = ""            # optional manual-boundary CSV
    calibration: str = ""          # open condition: recording CSV or model JSON
    out_dir: str = "out"
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    outlier_multiplier: float = 35.0
    early_late_window: int = 10
    n_trials: int = 80
    transforms: dict = field(default_factory=lambda: dict(DEFAULT_TRANSFORMS))
    alpha: float = DEFAULT_ALPHA
    bootstrap_b: int = 1000
    seed: int = 0
    resample_rate: float = 100.0
    position_cutoff_hz: float = 6.0
    jobs: int = 1

    def validate(self):
        if self.condition not in ("teleoperated", "open"):
            raise ConfigError(f"condition must be teleoperated|open, got {self.condition!r}")
        if self.outlier_multiplier <= 1.0:
            raise ConfigError("outlier_multiplier must exceed 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha {self.alpha} not in (0, 1)")
        if self.early_late_window < 1 or self.early_late_window > self.n_trials:
            raise ConfigError("early_late_window must be in [1, n_trials]")
        if self.bootstrap_b < 1:
            raise ConfigError("bootstrap_b must be positive")
        if self.resample_rate <= 0 or self.position_cutoff_hz <= 0:
            raise ConfigError("rates and cutoffs must be positive")
        if self.position_cutoff_hz >= self.resample_rate / 2:
            raise ConfigError("position cutoff must be below Nyquist")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        unknown = set(self.transforms) - {"TT", "P", "A", "C"}
        if unknown:
            raise ConfigError(f"transforms for unknown metrics: {sorted(unknown)}")
        bad = {m: t for m, t in self.transforms.items() if t not in ("none", "log")}
        if bad:
            raise ConfigError(f"unknown transform tags: {bad}")
        try:
            self.segmentation.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


_SCALAR_FIELDS = {
    f.name: f.type for f in fields(RunConfig)
    if f.name not in ("segmentation", "transforms")
}


def load_config(path=None, overrides=None, env=None):
    """Build a RunConfig from a YAML file, a dict of overrides, and the env.

    Precedence (lowest to highest): defaults, file, ``overrides`` dict,
    ``NEEDLEMETRICS_*`` environment variables.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        data.update(loaded)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})

    seg_data = data.pop("segmentation", {}) or {}
    transforms = dict(DEFAULT_TRANSFORMS)
    transforms.update(data.pop("transforms", {}) or {})

    unknown = set(data) - set(_SCALAR_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        seg = SegmentationParams(**seg_data)
    except TypeError as exc:
        raise ConfigError(f"bad segmentation params: {exc}") from exc

    config = RunConfig(segmentation=seg, transforms=transforms, **data)
    _apply_env(config, os.environ if env is None else env)
    return config.validate()


def _apply_env(config, env):
    for name in _SCALAR_FIELDS:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is None:
            continue
        current = getattr(config, name)
        try:
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError as exc:
            raise ConfigError(
                f"bad value for {ENV_PREFIX + name.upper()}: {raw!r}"
            ) from exc
        setattr(config, name, value)
