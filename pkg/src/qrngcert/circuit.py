"""Fabrication errors, mirror devices and multi-copy test arrangements."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .exceptions import InvalidArgumentError
from .mesh import BeamSplitter, CircuitPlan, PhaseDiagonal, invert_plan, reconstruct

TRUNCATE_SIGMAS = 4.0

MIRRORS_AT_BACK = "mirrors_at_back"
ALTERNATING = "alternating"
EVEN_SELF_ADJOINT = "even_self_adjoint"
EXPLICIT = "explicit"
STYLES = (MIRRORS_AT_BACK, ALTERNATING, EVEN_SELF_ADJOINT, EXPLICIT)


def _prob(name: str, p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"{name} must be a probability in [0, 1], got {p}")
    return p


@dataclass(frozen=True)
class ErrorModel:
    """Systematic offsets, random jitter and loss for one device.

    ``systematic_theta`` / ``systematic_phi`` are keyed by gate position in
    the nominal plan.  A phase-diagonal gate takes a scalar offset (applied
    to every mode) or one offset per mode in ``systematic_phi``.

    Survival probability of one pass is ``transmission`` times the product
    of ``component_transmission`` over the gates it names.
    """

    systematic_theta: Mapping[int, float] = field(default_factory=dict)
    systematic_phi: Mapping[int, float | Sequence[float]] = field(default_factory=dict)
    jitter_sigma_theta: float = 0.0
    jitter_sigma_phi: float = 0.0
    transmission: float = 1.0
    component_transmission: Mapping[int, float] = field(default_factory=dict)
    detector_efficiency: float | Sequence[float] = 1.0
    herald_efficiency: float = 1.0
    mmi_phase_sigma: float = 0.0
    mmi_phase_offset: float = 0.0

    def __post_init__(self):
        for name in ("jitter_sigma_theta", "jitter_sigma_phi", "mmi_phase_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidArgumentError(f"{name} must be a finite non-negative number, got {v}")
        _prob("transmission", self.transmission)
        _prob("herald_efficiency", self.herald_efficiency)
        for k, t in self.component_transmission.items():
            _prob(f"component_transmission[{k}]", t)
        eff = np.atleast_1d(np.asarray(self.detector_efficiency, dtype=float))
        for e in eff:
            _prob("detector_efficiency", e)

    @property
    def has_jitter(self) -> bool:
        return self.jitter_sigma_theta > 0 or self.jitter_sigma_phi > 0 or self.mmi_phase_sigma > 0

    def systematic_only(self) -> "ErrorModel":
        return replace(self, jitter_sigma_theta=0.0, jitter_sigma_phi=0.0, mmi_phase_sigma=0.0)

    def survival(self, plan: CircuitPlan) -> float:
        s = self.transmission
        for k, t in self.component_transmission.items():
            if not 0 <= k < len(plan):
                raise InvalidArgumentError(f"component_transmission names gate {k}, plan has {len(plan)}")
            s *= t
        return s

    def detector_vector(self, n: int) -> np.ndarray:
        eff = np.asarray(self.detector_efficiency, dtype=float)
        if eff.ndim == 0:
            return np.full(n, float(eff))
        if eff.shape != (n,):
            raise InvalidArgumentError(f"detector_efficiency has {eff.size} entries, circuit has {n} modes")
        return eff.copy()


@dataclass(frozen=True)
class RealizedCircuit:
    """A device with concrete (possibly perturbed) parameters.

    ``deltas`` records, per realized gate, how far each parameter sits from
    the nominal value it was derived from; it is empty for circuits that were
    never perturbed.
    """

    plan: CircuitPlan
    survival: float = 1.0
    detector_efficiency: np.ndarray | None = None
    herald_efficiency: float = 1.0
    deltas: tuple = ()

    def __post_init__(self):
        _prob("survival", self.survival)
        _prob("herald_efficiency", self.herald_efficiency)
        eff = (np.ones(self.plan.n) if self.detector_efficiency is None
               else np.asarray(self.detector_efficiency, dtype=float).reshape(-1))
        if eff.shape != (self.plan.n,):
            raise InvalidArgumentError("detector_efficiency must have one entry per mode")
        for e in eff:
            _prob("detector_efficiency", e)
        eff.setflags(write=False)
        object.__setattr__(self, "detector_efficiency", eff)

    @property
    def n(self) -> int:
        return self.plan.n

    @cached_property
    def unitary(self) -> np.ndarray:
        u = reconstruct(self.plan)
        u.setflags(write=False)
        return u

    @property
    def transfer(self) -> np.ndarray:
        """Full single-photon transfer matrix: unitary part scaled by the survival amplitude."""
        return math.sqrt(self.survival) * self.unitary

    @classmethod
    def ideal(cls, plan: CircuitPlan) -> "RealizedCircuit":
        return cls(plan)


@dataclass(frozen=True)
class ArrangementSpec:
    """How forward copies and mirrors are chained for an amplification test.

    ``order`` is only used by the explicit style: tokens ``("U", k)`` or
    ``("M", k)`` written in matrix-product order, like the other styles'
    formulas (leftmost factor acts last).
    """

    copies: int
    style: str = ALTERNATING
    independent_errors: bool = False
    order: tuple = ()

    def __post_init__(self):
        if self.copies < 1:
            raise InvalidArgumentError(f"copies must be >= 1, got {self.copies}")
        if self.style not in STYLES:
            raise InvalidArgumentError(f"unknown arrangement style {self.style!r}")
        if self.style == EVEN_SELF_ADJOINT and self.copies % 2:
            raise InvalidArgumentError(f"even_self_adjoint needs an even copy count, got {self.copies}")
        if self.style == EXPLICIT:
            toks = tuple((str(kind), int(k)) for kind, k in self.order)
            want = {(kind, k) for kind in ("U", "M") for k in range(self.copies)}
            if len(toks) != 2 * self.copies or set(toks) != want:
                raise InvalidArgumentError(
                    "explicit order must list every ('U', k) and ('M', k) exactly once")
            object.__setattr__(self, "order", toks)

    @property
    def uses_mirrors(self) -> bool:
        return self.style != EVEN_SELF_ADJOINT

    def product_tokens(self) -> list[tuple[str, int]]:
        n = self.copies
        if self.style == MIRRORS_AT_BACK:
            return [("U", k) for k in range(n)] + [("M", k) for k in reversed(range(n))]
        if self.style == ALTERNATING:
            return [t for k in range(n) for t in (("U", k), ("M", k))]
        if self.style == EVEN_SELF_ADJOINT:
            return [("U", k) for k in range(n)]
        return list(self.order)


# -- perturbation -------------------------------------------------------------

def _rng(seed: int, copy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(copy)]))


def _truncated_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.standard_normal(size)
    bad = np.abs(z) > TRUNCATE_SIGMAS
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > TRUNCATE_SIGMAS
    return z


def _jitter_plan(plan: CircuitPlan, sigma_theta: float, sigma_phi: float,
                 rng: np.random.Generator, sys_theta=None, sys_phi=None,
                 mmi_sigma: float = 0.0, mmi_offset: float = 0.0):
    sys_theta = sys_theta or {}
    sys_phi = sys_phi or {}
    insert_mmi = mmi_sigma > 0 or mmi_offset != 0
    gates, deltas = [], []
    for k, g in enumerate(plan.gates):
        if isinstance(g, BeamSplitter):
            z = _truncated_normal(rng, 2)
            off_phi = sys_phi.get(k, 0.0)
            if not np.isscalar(off_phi):
                raise InvalidArgumentError(f"gate {k} is a beam splitter; phi offset must be a scalar")
            dt = float(sys_theta.get(k, 0.0) + sigma_theta * z[0])
            dp = float(off_phi + sigma_phi * z[1])
            gates.append(BeamSplitter(g.j, g.theta + dt, g.phi + dp))
            deltas.append({"gate": k, "theta": dt, "phi": dp})
            if insert_mmi:
                zm = _truncated_normal(rng, 2)
                ph = [0.0] * plan.n
                ph[g.j] = mmi_offset + mmi_sigma * zm[0]
                ph[g.j + 1] = mmi_offset + mmi_sigma * zm[1]
                gates.append(PhaseDiagonal(tuple(ph)))
        else:
            if k in sys_theta:
                raise InvalidArgumentError(f"gate {k} is a phase diagonal; it has no theta")
            z = _truncated_normal(rng, plan.n)
            off = np.broadcast_to(np.asarray(sys_phi.get(k, 0.0), dtype=float), (plan.n,))
            dph = off + sigma_phi * z
            gates.append(PhaseDiagonal(tuple(float(p + d) for p, d in zip(g.phases, dph))))
            deltas.append({"gate": k, "phases": [float(d) for d in dph]})
    return CircuitPlan(plan.n, tuple(gates)), tuple(deltas)


def _check_positions(plan: CircuitPlan, model: ErrorModel) -> None:
    for name in ("systematic_theta", "systematic_phi"):
        for k in getattr(model, name):
            if not 0 <= int(k) < len(plan):
                raise InvalidArgumentError(f"{name} names gate {k}, plan has {len(plan)} gates")


def perturb(plan: CircuitPlan, model: ErrorModel, seed: int, copy: int = 0) -> RealizedCircuit:
    """Realize ``plan`` under ``model``: nominal + systematic offset + truncated Gaussian jitter.

    Jitter for copy ``copy`` comes from the stream ``SeedSequence([seed, copy])``,
    so per-copy draws do not depend on the order copies are built in.
    """
    _check_positions(plan, model)
    realized, deltas = _jitter_plan(
        plan, model.jitter_sigma_theta, model.jitter_sigma_phi, _rng(seed, copy),
        {int(k): float(v) for k, v in model.systematic_theta.items()},
        {int(k): v for k, v in model.systematic_phi.items()},
        model.mmi_phase_sigma, model.mmi_phase_offset,
    )
    return RealizedCircuit(
        realized,
        survival=model.survival(plan),
        detector_efficiency=model.detector_vector(plan.n),
        herald_efficiency=model.herald_efficiency,
        deltas=deltas,
    )


def mirror_circuit(rc: RealizedCircuit) -> RealizedCircuit:
    """Mirror built with exactly the opposite of ``rc``'s realized parameters."""
    return RealizedCircuit(
        invert_plan(rc.plan),
        survival=rc.survival,
        detector_efficiency=rc.detector_efficiency,
        herald_efficiency=rc.herald_efficiency,
        deltas=tuple({"mirror_of": d} for d in reversed(rc.deltas)),
    )


def independent_mirror(nominal: CircuitPlan, model: ErrorModel, seed: int, copy: int = 0) -> RealizedCircuit:
    """A separately fabricated mirror chip.

    It shares the device's systematic errors (with opposite sign, as a mirror
    fabricated in the same process) but carries its own jitter, drawn from
    the stream of ``copy``.
    """
    systematic = perturb(nominal, model.systematic_only(), seed, copy)
    inverse = invert_plan(systematic.plan)
    realized, deltas = _jitter_plan(inverse, model.jitter_sigma_theta, model.jitter_sigma_phi,
                                    _rng(seed, copy), mmi_sigma=model.mmi_phase_sigma)
    return RealizedCircuit(
        realized,
        survival=systematic.survival,
        detector_efficiency=systematic.detector_efficiency,
        herald_efficiency=systematic.herald_efficiency,
        deltas=deltas,
    )


def chain(devices: Sequence[RealizedCircuit]) -> RealizedCircuit:
    """Devices connected output-to-input, ``devices[0]`` first; survivals multiply.

    Detector and herald properties are those of the first device.
    """
    if not devices:
        raise InvalidArgumentError("cannot chain zero devices")
    plan = devices[0].plan
    survival = devices[0].survival
    deltas = list(devices[0].deltas)
    for d in devices[1:]:
        plan = plan.then(d.plan)
        survival *= d.survival
        deltas.extend(d.deltas)
    return RealizedCircuit(plan, survival=survival,
                           detector_efficiency=devices[0].detector_efficiency,
                           herald_efficiency=devices[0].herald_efficiency,
                           deltas=tuple(deltas))


def compose_arrangement(fwd_copies: Sequence[RealizedCircuit], spec: ArrangementSpec,
                        mirrors: Sequence[RealizedCircuit] | None = None) -> RealizedCircuit:
    """Chain forward copies and mirrors into one device according to ``spec``.

    ``mirrors[k]`` is the mirror device paired with copy ``k`` (already
    implementing the inverse); when omitted, exact mirrors of each forward
    copy are used.
    """
    if len(fwd_copies) != spec.copies:
        raise InvalidArgumentError(f"spec wants {spec.copies} copies, got {len(fwd_copies)}")
    if spec.uses_mirrors:
        if mirrors is None:
            mirrors = [mirror_circuit(c) for c in fwd_copies]
        if len(mirrors) != spec.copies:
            raise InvalidArgumentError(f"spec wants {spec.copies} mirrors, got {len(mirrors)}")
    pick = {"U": fwd_copies, "M": mirrors}
    product = [pick[kind][k] for kind, k in spec.product_tokens()]
    # the rightmost factor of the product meets the photon first
    return chain(product[::-1])


def build_arrangement(nominal: CircuitPlan, model: ErrorModel, spec: ArrangementSpec,
                      seed: int, mirror_mode: str = "exact") -> RealizedCircuit:
    """Fabricate every copy (and mirror) for ``spec`` and compose them.

    With shared errors every forward copy is the same realization (copy
    stream 0).  ``mirror_mode`` is ``"exact"`` (perfectly anti-correlated
    mirrors) or ``"independent"`` (fresh jitter per mirror, streams after
    the forward copies).
    """
    if mirror_mode not in ("exact", "independent"):
        raise InvalidArgumentError(f"unknown mirror mode {mirror_mode!r}")
    n = spec.copies
    if spec.independent_errors:
        fwd = [perturb(nominal, model, seed, copy=k) for k in range(n)]
    else:
        fwd = [perturb(nominal, model, seed, copy=0)] * n
    mirrors = None
    if spec.uses_mirrors:
        if mirror_mode == "exact":
            mirrors = [mirror_circuit(c) for c in fwd]
        elif spec.independent_errors:
            mirrors = [independent_mirror(nominal, model, seed, copy=n + k) for k in range(n)]
        else:
            mirrors = [independent_mirror(nominal, model, seed, copy=n)] * n
    return compose_arrangement(fwd, spec, mirrors)
