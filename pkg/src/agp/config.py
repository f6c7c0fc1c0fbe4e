"""Run configuration: JSON file, overridden by CLI flags, snapshotted into reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .similarity import SimilarityParams

LATENT_STRATEGIES = ("prior", "interpolate")
RASTER_MODES = ("binary", "splat")


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 16
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 50
    strategy: str = "interpolate"
    raster: str = "binary"

    def validate(self):
        _check(self.latent_dim >= 1, "vae.latent_dim must be >= 1")
        _check(0 < self.lr < 1, "vae.lr must lie in (0, 1)")
        _check(self.batch >= 1, "vae.batch must be >= 1")
        _check(self.epochs >= 0, "vae.epochs must be >= 0")
        _check(self.strategy in LATENT_STRATEGIES, f"vae.strategy must be one of {LATENT_STRATEGIES}")
        _check(self.raster in RASTER_MODES, f"vae.raster must be one of {RASTER_MODES}")


@dataclass(frozen=True)
class Thresholds:
    image: float = 0.5
    skeleton: float = 0.5

    def validate(self):
        _check(0 <= self.image <= 1, "thresholds.image must lie in [0, 1]")
        _check(0 < self.skeleton < 1, "thresholds.skeleton must lie in (0, 1)")


@dataclass(frozen=True)
class Config:
    data_root: str | None = None
    radius: float = 1.6
    beta: float = 1.4
    density: int = 300
    classify_k: int = 10
    gen_k_range: tuple = (6, 7, 8, 9, 10)
    D: int = 500
    shift_px: float = 3.0
    rotations: tuple = (15.0, -15.0, 25.0, -25.0)
    frame: int = 105
    eval_only: bool = False
    vae: VaeConfig = field(default_factory=VaeConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    seed: int = 0

    def validate(self) -> Config:
        _check(self.radius > 0, "radius must be > 0")
        _check(self.beta > 1, "beta must be > 1")
        _check(self.density >= 1, "density must be >= 1")
        _check(self.classify_k >= 1, "classify_k must be >= 1")
        _check(len(self.gen_k_range) >= 1 and min(self.gen_k_range) >= 1, "gen_k_range must hold counts >= 1")
        _check(self.D >= 1, "D must be >= 1")
        _check(self.D % len(self.gen_k_range) == 0, "D must be divisible by len(gen_k_range)")
        _check(self.shift_px >= 0, "shift_px must be >= 0")
        _check(self.frame >= 2, "frame must be >= 2")
        _check(self.seed >= 0, "seed must be >= 0")
        self.vae.validate()
        self.thresholds.validate()
        return self

    @property
    def similarity(self) -> SimilarityParams:
        return SimilarityParams(self.radius, self.beta, self.shift_px, self.rotations)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["gen_k_range"] = list(self.gen_k_range)
        doc["rotations"] = list(self.rotations)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> Config:
        return cls().override(doc)

    def override(self, changes: dict) -> Config:
        """Return a copy with ``changes`` applied; nested dicts merge into
        ``vae``/``thresholds``. Unknown keys are rejected."""
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, val in changes.items():
            if val is None and key != "data_root":
                continue
            if key in ("vae", "thresholds"):
                sub = getattr(self, key)
                sub_known = {f.name for f in fields(sub)}
                bad = set(val) - sub_known
                if bad:
                    raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
                val = replace(sub, **val)
            elif key in ("gen_k_range", "rotations"):
                val = tuple(val)
            kw[key] = val
        try:
            cfg = replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            return cfg.validate()
        except TypeError as exc:
            raise ConfigError(f"bad config value type: {exc}") from exc


def _check(ok, message):
    if not ok:
        raise ConfigError(message)


def load_config(path=None, overrides: dict | None = None) -> Config:
    cfg = Config()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        cfg = cfg.override(doc)
    if overrides:
        cfg = cfg.override(overrides)
    return cfg.validate()
