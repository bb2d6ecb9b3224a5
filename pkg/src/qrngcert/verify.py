"""Certification battery: undo test, sharpness, detector coverage, self-adjointness, amplification."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .circuit import ArrangementSpec, ErrorModel, RealizedCircuit, build_arrangement, chain
from .exceptions import ConfigError, InvalidArgumentError
from .matrix import identity_deviation, unitarity_deviation
from .mesh import CircuitPlan
from .simulator import (_check_input, fringe_contrast, interference_visibility, sample_trials)

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class Thresholds:
    """Pass/fail limits used by the certification battery; every field can be overridden per run."""

    identity_max: float = 1e-3
    fidelity_min: float = 0.999
    visibility_min: float = 0.999
    sharpness_max: float = 1e-6
    self_adjoint_max: float = 1e-3
    coverage_min_clicks: int = 10
    coverage_significance: float = 1e-3
    leak_significance: float = 1e-3


@dataclass(frozen=True)
class Verdict:
    passed: bool
    value: Any
    threshold: Any
    rule: str


@dataclass
class CertificationReport:
    unitarity_deviation: float = math.nan
    identity_deviation: float = math.nan
    recovery_fidelity: float = math.nan
    survival: float = math.nan
    visibility_raw: float = math.nan
    visibility_contrast: float = math.nan
    sharpness_offdiag_max: float | None = None
    coverage_pass: bool | None = None
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    seed: int | None = None
    counts: dict | None = None
    diagnosis: list | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(v.passed for v in self.verdicts.values())

    def add(self, name: str, passed: bool, value, threshold, rule: str) -> None:
        self.verdicts[name] = Verdict(bool(passed), value, threshold, rule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdicts"] = {k: asdict(v) for k, v in self.verdicts.items()}
        extra = d.pop("extra")
        d.update(extra)
        d["passed"] = self.passed
        d["schema_version"] = SCHEMA_VERSION
        return _clean(d)


def _clean(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_report(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_document(command: str, config: dict, body: dict) -> dict:
    """Top-level report with provenance.  No timestamps, so identical runs are byte-identical."""
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "code_version": __version__,
        "config": config,
        **body,
    })


# -- individual tests -------------------------------------------------------

def _leak_pvalue(leaks: int, detected: int, p_allowed: float) -> float:
    if leaks == 0:
        return 1.0
    return float(stats.binom.sf(leaks - 1, detected, p_allowed))


def inversion_test(fwd: RealizedCircuit, mirror: RealizedCircuit, psi, n: int, seed: int,
                   thresholds: Thresholds = Thresholds(), statistical: bool = True) -> CertificationReport:
    """Undo test: run ``fwd`` then ``mirror`` and check the input comes back.

    Metrics are computed on the composed device ``M = mirror . fwd``.  When
    ``statistical`` is set, ``n`` trials are sampled and the clicks outside
    the input mode must be consistent (binomial test) with at most
    ``1 - fidelity_min`` leakage.
    """
    if fwd.n != mirror.n:
        raise InvalidArgumentError(f"device has {fwd.n} modes, mirror has {mirror.n}")
    if statistical and n <= 0:
        raise ConfigError("statistical checks need a positive trial count")
    composed = chain([fwd, mirror])
    psi = _check_input(composed, psi)
    t = thresholds

    out = composed.transfer @ psi
    norm2 = float(np.vdot(out, out).real)
    overlap = complex(np.vdot(psi, out))
    fidelity = abs(overlap) ** 2 / norm2 if norm2 > 0 else 0.0

    rep = CertificationReport(
        unitarity_deviation=unitarity_deviation(composed.unitary),
        identity_deviation=identity_deviation(composed.unitary),
        recovery_fidelity=float(min(1.0, fidelity)),
        survival=composed.survival,
        visibility_raw=interference_visibility(composed, psi),
        visibility_contrast=fringe_contrast(composed, psi),
        seed=seed,
    )
    rep.add("identity_deviation", rep.identity_deviation <= t.identity_max,
            rep.identity_deviation, t.identity_max, "<=")
    rep.add("recovery_fidelity", rep.recovery_fidelity >= t.fidelity_min,
            rep.recovery_fidelity, t.fidelity_min, ">=")
    rep.add("visibility_raw", rep.visibility_raw >= t.visibility_min,
            rep.visibility_raw, t.visibility_min, ">=")

    if statistical:
        home = int(np.argmax(np.abs(psi)))
        if abs(abs(psi[home]) - 1.0) > 1e-10:
            raise InvalidArgumentError("statistical recovery check needs a single-mode input state")
        counts = sample_trials(composed, psi, n, seed)
        leaks = counts.detected - counts.mode_counts[home]
        pval = _leak_pvalue(leaks, counts.detected, 1.0 - t.fidelity_min)
        ok = counts.detected > 0 and pval >= t.leak_significance
        rep.counts = {"trials": counts.trials, "herald": counts.herald_count,
                      "modes": list(counts.mode_counts), "lost": counts.loss_count,
                      "input_mode": home, "off_mode_clicks": leaks}
        rep.add("recovery_statistics", ok, pval, t.leak_significance, "p >=")

    if fwd.deltas or mirror.deltas:
        rep.diagnosis = [{"device": "forward", "deltas": list(fwd.deltas)},
                         {"device": "mirror", "deltas": list(mirror.deltas)}]
    return rep


class SharpnessResult(NamedTuple):
    offdiag_max: float
    passed: bool


def sharpness_test(rc, threshold: float = Thresholds.sharpness_max) -> SharpnessResult:
    """Largest overlap between images of distinct basis states.

    ``rc`` may be a :class:`RealizedCircuit` (its unitary part is used) or a
    bare matrix, which is how non-unitary devices are examined.
    """
    m = rc.unitary if isinstance(rc, RealizedCircuit) else np.asarray(rc, dtype=np.complex128)
    gram = m.conj().T @ m
    off = gram - np.diag(np.diag(gram))
    worst = float(np.abs(off).max()) if off.size else 0.0
    return SharpnessResult(worst, worst <= threshold)


@dataclass(frozen=True)
class CoverageResult:
    fired: tuple[bool, ...]
    passed: bool
    clicks: tuple[int, ...]
    intervals: tuple[tuple[float, float], ...]


def detector_coverage_test(rc: RealizedCircuit, psi, n: int, seed: int,
                           min_clicks: int = Thresholds.coverage_min_clicks,
                           significance: float = Thresholds.coverage_significance) -> CoverageResult:
    """Operational check that every outcome is possible but none is certain.

    Passes iff every mode clicks at least ``min_clicks`` times, no mode takes
    every click, and each mode's Clopper-Pearson interval at confidence
    ``1 - significance`` excludes both 0 and 1.
    """
    if n < 1:
        raise InvalidArgumentError("coverage test needs at least one trial")
    counts = sample_trials(rc, psi, n, seed)
    total = counts.detected
    clicks = counts.mode_counts
    intervals = []
    interior = True
    for k in clicks:
        if total == 0:
            lo, hi = 0.0, 1.0
        else:
            ci = stats.binomtest(k, total).proportion_ci(confidence_level=1.0 - significance, method="exact")
            lo, hi = float(ci.low), float(ci.high)
        intervals.append((lo, hi))
        interior &= lo > 0.0 and hi < 1.0
    passed = (total > 0 and all(k >= min_clicks for k in clicks)
              and max(clicks) < total and interior)
    return CoverageResult(tuple(k > 0 for k in clicks), bool(passed), clicks, tuple(intervals))


class SelfAdjointResult(NamedTuple):
    deviation: float
    passed: bool


def self_adjoint_test(rc: RealizedCircuit, tolerance: float = Thresholds.self_adjoint_max) -> SelfAdjointResult:
    """Two copies in series must undo each other when the device is its own inverse."""
    u = rc.unitary
    dev = identity_deviation(u @ u)
    return SelfAdjointResult(dev, dev <= tolerance)


@dataclass(frozen=True)
class AmplificationRow:
    style: str
    copies: int
    identity_deviation: float
    spread: float = 0.0
    repeats: int = 1


def amplification_scan(nominal: CircuitPlan, model: ErrorModel, specs: Sequence[ArrangementSpec],
                       seed: int, mirror_mode: str = "exact", repeats: int = 1) -> list[AmplificationRow]:
    """Identity deviation of each arrangement, averaged over ``repeats`` fabrication seeds.

    Rows are sorted by copy count (stable, so ties keep input order);
    ``spread`` is the sample standard deviation across repeats.
    """
    if repeats < 1:
        raise InvalidArgumentError("repeats must be >= 1")
    seeds = [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(repeats, dtype=np.uint32)]
    rows = []
    for spec in specs:
        devs = [identity_deviation(build_arrangement(nominal, model, spec, s, mirror_mode).unitary)
                for s in seeds]
        rows.append(AmplificationRow(spec.style, spec.copies, float(np.mean(devs)),
                                     float(np.std(devs, ddof=1)) if repeats > 1 else 0.0, repeats))
    return sorted(rows, key=lambda r: r.copies)
