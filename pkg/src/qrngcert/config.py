"""Run configuration: one JSON or YAML file per run, validated strictly.

Relative paths inside a config file are resolved against the file's own
directory, so a config and its data files can be moved together.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from .circuit import ALTERNATING, EVEN_SELF_ADJOINT, STYLES, ArrangementSpec, ErrorModel
from .exceptions import ConfigError
from .verify import Thresholds


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CircuitSource(_Strict):
    """Exactly one of: the built-in three-mode QRNG, a plan file, a unitary file, or a DFT size."""

    ux: Optional[Literal["primed", "inverse"]] = None
    plan: Optional[str] = None
    unitary: Optional[str] = None
    dft: Optional[int] = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _one_source(self):
        given = [k for k in ("ux", "plan", "unitary", "dft") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError(f"circuit needs exactly one source, got {given or 'none'}")
        return self


class GateOffsets(_Strict):
    theta: Optional[float] = None
    phi: Optional[Union[float, list[float]]] = None


class Jitter(_Strict):
    sigma_theta: float = Field(default=0.0, ge=0)
    sigma_phi: float = Field(default=0.0, ge=0)


class Errors(_Strict):
    systematic: dict[int, GateOffsets] = Field(default_factory=dict)
    jitter: Jitter = Jitter()
    transmission: float = Field(default=1.0, ge=0, le=1)
    component_transmission: dict[int, float] = Field(default_factory=dict)
    detector_efficiency: Union[float, list[float]] = 1.0
    herald_efficiency: float = Field(default=1.0, ge=0, le=1)
    mmi_phase_sigma: float = Field(default=0.0, ge=0)
    mmi_phase_offset: float = 0.0

    def model(self) -> ErrorModel:
        return ErrorModel(
            systematic_theta={k: v.theta for k, v in self.systematic.items() if v.theta is not None},
            systematic_phi={k: v.phi for k, v in self.systematic.items() if v.phi is not None},
            jitter_sigma_theta=self.jitter.sigma_theta,
            jitter_sigma_phi=self.jitter.sigma_phi,
            transmission=self.transmission,
            component_transmission=dict(self.component_transmission),
            detector_efficiency=self.detector_efficiency,
            herald_efficiency=self.herald_efficiency,
            mmi_phase_sigma=self.mmi_phase_sigma,
            mmi_phase_offset=self.mmi_phase_offset,
        )


class ThresholdSettings(_Strict):
    identity_max: float = Thresholds.identity_max
    fidelity_min: float = Thresholds.fidelity_min
    visibility_min: float = Thresholds.visibility_min
    sharpness_max: float = Thresholds.sharpness_max
    self_adjoint_max: float = Thresholds.self_adjoint_max
    coverage_min_clicks: int = Thresholds.coverage_min_clicks
    coverage_significance: float = Thresholds.coverage_significance
    leak_significance: float = Thresholds.leak_significance

    def thresholds(self) -> Thresholds:
        return Thresholds(**self.model_dump())


class Arrangement(_Strict):
    copies: int = Field(ge=1)
    style: str = ALTERNATING
    independent_errors: bool = False
    order: list[tuple[Literal["U", "M"], int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _known_style(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown arrangement style {self.style!r}; choose from {STYLES}")
        return self

    def spec(self) -> ArrangementSpec:
        return ArrangementSpec(self.copies, self.style, self.independent_errors, tuple(self.order))


class Amplify(_Strict):
    style: str = EVEN_SELF_ADJOINT
    copies: list[int] = Field(default_factory=lambda: [2, 4, 8], min_length=1)
    independent_errors: bool = False
    repeats: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _known_style(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown arrangement style {self.style!r}; choose from {STYLES}")
        return self

    def specs(self) -> list[ArrangementSpec]:
        return [ArrangementSpec(c, self.style, self.independent_errors) for c in self.copies]


class Generate(_Strict):
    base: Optional[Literal[2, 3]] = None
    mapping: Optional[dict[int, int]] = None
    expected: Optional[list[float]] = None
    significance: float = Field(default=1e-3, gt=0, lt=1)
    max_block: int = Field(default=2, ge=1)
    borel_on: Literal["auto", "digits", "bits"] = "auto"
    write_bits: bool = False


class FreeParameter(_Strict):
    gate: int = Field(ge=0)
    angle: Literal["theta", "phi"]
    mode: Optional[int] = None
    bounds: tuple[float, float] = (-0.2, 0.2)


class DatasetConfig(_Strict):
    """Observed counts from ``counts_csv``, or ``trials`` simulated from the truth model."""

    input_mode: int = Field(default=0, ge=0)
    arrangement: Optional[Arrangement] = None
    counts_csv: Optional[str] = None
    trials: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.counts_csv is None) == (self.trials is None):
            raise ValueError("a dataset needs exactly one of counts_csv or trials")
        return self


class Calibrate(_Strict):
    truth: Optional[Errors] = None
    datasets: list[DatasetConfig] = Field(min_length=1)
    free_parameters: list[FreeParameter] = Field(min_length=1)
    n_starts: int = Field(default=4, ge=1)
    emit_corrected_plan: bool = False


class RunConfig(_Strict):
    seed: Optional[int] = Field(default=None, ge=0)
    circuit: CircuitSource = CircuitSource(ux="primed")
    errors: Errors = Errors()
    mirror: Literal["exact", "independent"] = "exact"
    input_mode: int = Field(default=0, ge=0)
    trials: int = Field(default=100_000, ge=0)
    coverage_trials: int = Field(default=100_000, ge=1)
    thresholds: ThresholdSettings = ThresholdSettings()
    self_adjoint: Union[bool, Literal["auto"]] = "auto"
    amplify: Optional[Amplify] = None
    generate: Generate = Generate()
    calibrate: Optional[Calibrate] = None
    _base_dir: Optional[str] = PrivateAttr(default=None)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self._base_dir is not None:
            p = Path(self._base_dir) / p
        return p

    def resolved(self) -> dict:
        """JSON-safe dump of every setting, defaults included, for embedding in reports."""
        return self.model_dump(mode="json")


def parse_config(doc: dict, base_dir=None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc
    if base_dir is not None:
        cfg._base_dir = str(base_dir)
    return cfg


def load_config(path) -> RunConfig:
    """Read a ``.json``, ``.yaml`` or ``.yml`` run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        elif path.suffix.lower() in (".yaml", ".yml"):
            doc = yaml.safe_load(text)
        else:
            raise ConfigError(f"config must be .json, .yaml or .yml, got {path.name}")
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(doc if doc is not None else {}, base_dir=path.parent)
