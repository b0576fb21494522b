"""Scenario configuration: a JSON document validated into typed sections.

Unknown keys are rejected everywhere.  Power levels are written in dBm and
converted to watts by :meth:`ScenarioConfig.power_config`; nothing past this
module sees dBm.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .beamforming import PowerConfig
from .channel import SPEED_OF_LIGHT, BlockageModel, RadioConfig
from .geometry import SystemGeometry
from .rng import MAX_SEED
from .tokens import CameraModel, feature_length, num_patches


class ConfigError(ValueError):
    """Raised for unreadable or invalid scenario files; the message names the line or key."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometrySection(_Section):
    num_waveguides: int = Field(4, ge=1)
    pas_per_waveguide: int = Field(16, ge=1)
    waveguide_length: float = Field(30.0, gt=0)
    region_depth: float = Field(12.0, gt=0)
    mount_height: float = Field(10.0, gt=0)
    waveguide_spacing: float = Field(3.0, gt=0)
    min_pa_spacing: float = Field(0.01, ge=0)


class RadioSection(_Section):
    carrier_freq_hz: float = Field(15e9, gt=0)
    n_eff: float = Field(1.4, gt=0)
    lightspeed: float = Field(SPEED_OF_LIGHT, gt=0)
    eta: Optional[float] = Field(None, gt=0)


class PowerSection(_Section):
    p_max_dbm: float = 20.0
    noise_dbm: float = -80.0
    allocation: Optional[list[float]] = None
    sinr_min_db: float = 20.0


class BlockageSection(_Section):
    mode: Literal["distance-exponential", "deterministic-mask"] = "distance-exponential"
    density: float = Field(0.005, ge=0)
    mask: Optional[list[list[float]]] = None


class CodebookSection(_Section):
    grid_points: int = Field(16, ge=1)
    pattern: Literal["uniform-offset", "per-waveguide-shift"] = "uniform-offset"
    pitch: Optional[float] = Field(0.1, gt=0)
    focus: bool = True
    cap: int = Field(4096, ge=1)
    pilots: Literal["all-ones", "identity"] = "identity"
    top_s: int = Field(3, ge=1)
    joint_mode: Literal["union", "tuple"] = "union"
    joint_cap: int = Field(100_000, ge=1)


class UsersSection(_Section):
    count: int = Field(8, ge=1)
    speed_max: float = Field(1.5, ge=0)
    slot_duration: float = Field(0.1, gt=0)
    window: int = Field(13, ge=1)
    horizon: int = Field(0, ge=0)
    edge_margin: float = Field(0.5, ge=0)


class CameraSection(_Section):
    position: tuple[float, float, float] = (-1.0, 6.0, 10.0)
    ref_size: float = Field(0.1, gt=0)
    ref_distance: float = Field(10.0, gt=0)


class TokensSection(_Section):
    patch_len: int = Field(4, ge=1)
    stride: int = Field(3, ge=1)
    embed_dim: int = Field(16, ge=1)

    @model_validator(mode="after")
    def _stride_fits(self):
        if self.stride > self.patch_len:
            raise ValueError("stride must not exceed patch_len")
        return self


class PredictorSection(_Section):
    hidden: int = Field(64, ge=0)
    experts: int = Field(2, ge=0)
    a0: float = 1.0
    eta_moe: Optional[float] = Field(None, gt=0)
    epochs: int = Field(150, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.1, gt=0)
    dwa_temperature: float = Field(2.0, gt=0)


class RunSection(_Section):
    seed: int = Field(2025, ge=0, le=MAX_SEED)
    trials: int = Field(20, ge=1)
    dataset_count: int = Field(2000, ge=1)
    eval_s: list[int] = [1, 3]


class OutageSection(_Section):
    rate_threshold: float = Field(2.0, gt=0)
    densities: list[float] = [0.01, 0.05, 0.1, 0.5]
    p_max_dbm: list[float] = [20.0]
    trials: int = Field(100_000, ge=1)
    user_x: Optional[float] = None
    conventional_position: Optional[tuple[float, float, float]] = None
    degenerate: bool = False

    @field_validator("densities")
    @classmethod
    def _non_negative(cls, v):
        if any(d < 0 for d in v):
            raise ValueError("densities must be non-negative")
        return v


class SweepSection(_Section):
    snr: list[float] = [-10.0, 0.0, 10.0, 20.0, 30.0]
    sinr_min: list[float] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
    power: list[float] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
    L: list[int] = [4, 8, 16, 32]
    grid_resolution: list[int] = [16, 64, 256, 1024]
    users_per_point: int = Field(50, ge=1)


SWEEP_AXES = {
    "snr": "snr",
    "sinr-min": "sinr_min",
    "power": "power",
    "L": "L",
    "grid-resolution": "grid_resolution",
}


class ScenarioConfig(_Section):
    name: str = "scenario"
    geometry: GeometrySection = GeometrySection()
    radio: RadioSection = RadioSection()
    power: PowerSection = PowerSection()
    blockage: BlockageSection = BlockageSection()
    codebook: CodebookSection = CodebookSection()
    users: UsersSection = UsersSection()
    camera: CameraSection = CameraSection()
    tokens: TokensSection = TokensSection()
    predictor: PredictorSection = PredictorSection()
    run: RunSection = RunSection()
    outage: OutageSection = OutageSection()
    sweep: SweepSection = SweepSection()

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.tokens.patch_len > self.users.window:
            raise ValueError("tokens.patch_len exceeds users.window")
        if self.power.allocation is not None and len(self.power.allocation) != self.users.count:
            raise ValueError("power.allocation needs one entry per user")
        # Build the domain objects once so their own checks fire at parse time.
        self.system_geometry()
        self.radio_config()
        self.power_config()
        self.blockage_model()
        return self

    # Domain objects -------------------------------------------------------

    def system_geometry(self) -> SystemGeometry:
        return SystemGeometry(**self.geometry.model_dump())

    def radio_config(self) -> RadioConfig:
        r = self.radio
        return RadioConfig(r.carrier_freq_hz, r.n_eff, r.lightspeed, r.eta)

    def power_config(self, p_max_dbm: Optional[float] = None, noise_dbm: Optional[float] = None) -> PowerConfig:
        p = self.power
        return PowerConfig.from_dbm(
            p.p_max_dbm if p_max_dbm is None else p_max_dbm,
            p.noise_dbm if noise_dbm is None else noise_dbm,
            p.allocation,
        )

    def blockage_model(self) -> BlockageModel:
        b = self.blockage
        mask = None if b.mask is None else np.array(b.mask, dtype=float)
        return BlockageModel(b.density, b.mode, mask)

    def camera_model(self) -> CameraModel:
        g = self.geometry
        c = self.camera
        return CameraModel(tuple(c.position), (g.waveguide_length, g.region_depth), c.ref_size, c.ref_distance)

    @property
    def num_patches(self) -> int:
        return num_patches(self.users.window, self.tokens.patch_len, self.tokens.stride)

    @property
    def user_feature_len(self) -> int:
        return feature_length(self.users.window, self.tokens.patch_len, self.tokens.stride)

    def with_updates(self, **sections) -> "ScenarioConfig":
        """Copy with some section fields replaced, e.g. ``with_updates(geometry={"pas_per_waveguide": 8})``."""
        doc = self.model_dump(mode="json")
        for name, fields in sections.items():
            doc[name] = {**doc[name], **fields}
        return ScenarioConfig.model_validate(doc)


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{key}: {e['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form."""
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def bundled_scenario(name: str = "paper_v") -> ScenarioConfig:
    path = Path(__file__).with_name("scenarios") / f"{name}.json"
    return load_config(path)
