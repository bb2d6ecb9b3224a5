"""Maximum-likelihood estimation of systematic angle and phase offsets from count tables.

The forward model for a candidate offset vector is: nominal plan plus the
offsets, composed into each dataset's arrangement with shared errors and
exact mirrors, then :func:`~qrngcert.simulator.outcome_probs`.  Loss and
detector efficiency are fixed inputs; only angles and phases are fitted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .circuit import ArrangementSpec, ErrorModel, RealizedCircuit, compose_arrangement, perturb
from .exceptions import CalibrationRefused, InvalidArgumentError
from .mesh import BeamSplitter, CircuitPlan, PhaseDiagonal
from .simulator import CountsTable, outcome_probs

PROB_FLOOR = 1e-12
CONVERGED_DIAMETER = 1e-6
FLAT_CURVATURE = 1e-8
HESSIAN_STEP = 1e-3
Z95 = 1.959963984540054


@dataclass(frozen=True)
class Parameter:
    """A fitted offset: ``angle`` is ``"theta"`` or ``"phi"``; phase diagonals use ``"phi"`` with ``mode``."""

    gate: int
    angle: str
    mode: int | None = None
    bounds: tuple[float, float] = (-0.2, 0.2)

    @property
    def label(self) -> str:
        return f"gate{self.gate}.{self.angle}" + ("" if self.mode is None else f"[{self.mode}]")


@dataclass(frozen=True)
class Dataset:
    input: np.ndarray
    counts: CountsTable
    arrangement: ArrangementSpec | None = None


@dataclass(frozen=True)
class CalibrationProblem:
    nominal: CircuitPlan
    datasets: tuple[Dataset, ...]
    free_parameters: tuple[Parameter, ...]
    transmission: float = 1.0
    detector_efficiency: float | Sequence[float] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "free_parameters", tuple(self.free_parameters))
        n = self.nominal.n
        for k, ds in enumerate(self.datasets):
            if ds.counts.n != n or np.asarray(ds.input).shape != (n,):
                raise InvalidArgumentError(f"dataset {k} does not match the {n}-mode plan")
        seen = set()
        for p in self.free_parameters:
            if not 0 <= p.gate < len(self.nominal):
                raise InvalidArgumentError(f"{p.label}: no such gate")
            g = self.nominal.gates[p.gate]
            if isinstance(g, BeamSplitter):
                if p.angle not in ("theta", "phi") or p.mode is not None:
                    raise InvalidArgumentError(f"{p.label}: beam splitters have theta and phi only")
            elif isinstance(g, PhaseDiagonal):
                if p.angle != "phi" or p.mode is None or not 0 <= p.mode < n:
                    raise InvalidArgumentError(f"{p.label}: phase diagonals need angle 'phi' and a mode")
            lo, hi = p.bounds
            if not lo < hi:
                raise InvalidArgumentError(f"{p.label}: empty bounds {p.bounds}")
            if (p.gate, p.angle, p.mode) in seen:
                raise InvalidArgumentError(f"{p.label} listed twice")
            seen.add((p.gate, p.angle, p.mode))

    @property
    def total_trials(self) -> int:
        return sum(int(ds.counts.buckets().sum()) for ds in self.datasets)


@dataclass
class CalibrationResult:
    parameters: tuple[Parameter, ...]
    estimates: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    half_widths: np.ndarray
    unidentified: tuple[str, ...] = ()
    start_index: int = 0
    starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "parameters": [p.label for p in self.parameters],
            "estimates": [float(x) for x in self.estimates],
            "half_widths_95": [float(x) for x in self.half_widths],
            "unidentified": list(self.unidentified),
            "objective_value": float(self.objective_value),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "best_start": int(self.start_index),
            "probability_floor": PROB_FLOOR,
        }


def offsets_model(params: Sequence[Parameter], values, n: int, base: ErrorModel | None = None) -> ErrorModel:
    """Error model holding ``values`` as systematic offsets (no jitter) on an ``n``-mode plan."""
    theta: dict[int, float] = {}
    phi: dict[int, object] = {}
    for p, v in zip(params, values):
        if p.angle == "theta":
            theta[p.gate] = theta.get(p.gate, 0.0) + float(v)
        elif p.mode is None:
            phi[p.gate] = phi.get(p.gate, 0.0) + float(v)
        else:
            vec = phi.setdefault(p.gate, [0.0] * n)
            vec[p.mode] += float(v)
    base = base or ErrorModel()
    return ErrorModel(systematic_theta=theta, systematic_phi=phi,
                      transmission=base.transmission, detector_efficiency=base.detector_efficiency,
                      herald_efficiency=base.herald_efficiency)


def candidate_device(problem: CalibrationProblem, values) -> RealizedCircuit:
    base = ErrorModel(transmission=problem.transmission, detector_efficiency=problem.detector_efficiency)
    return perturb(problem.nominal, offsets_model(problem.free_parameters, values, problem.nominal.n, base), seed=0)


def model_probabilities(problem: CalibrationProblem, values, dataset: Dataset,
                        device: RealizedCircuit | None = None) -> np.ndarray:
    dev = device if device is not None else candidate_device(problem, values)
    if dataset.arrangement is not None:
        dev = compose_arrangement([dev] * dataset.arrangement.copies, dataset.arrangement)
    return outcome_probs(dev, dataset.input).buckets()


def _check_bounds(problem: CalibrationProblem, values) -> None:
    for p, v in zip(problem.free_parameters, values):
        lo, hi = p.bounds
        if not lo <= v <= hi:
            raise InvalidArgumentError(f"{p.label}={v} outside bounds {p.bounds}")


def negative_log_likelihood(problem: CalibrationProblem, values, check_bounds: bool = True) -> float:
    """Multinomial NLL of all datasets, constant term omitted (so it is non-negative).

    Categories are the output modes plus the loss bucket.  Model
    probabilities are floored at ``PROB_FLOOR`` to keep the value finite.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (len(problem.free_parameters),):
        raise InvalidArgumentError(
            f"expected {len(problem.free_parameters)} parameter values, got shape {values.shape}")
    if check_bounds:
        _check_bounds(problem, values)
    if not problem.datasets:
        return 0.0
    device = candidate_device(problem, values)
    total = 0.0
    for ds in problem.datasets:
        p = np.maximum(model_probabilities(problem, values, ds, device), PROB_FLOOR)
        total -= float(np.dot(ds.counts.buckets(), np.log(p)))
    return total


def minimum_nll(problem: CalibrationProblem) -> float:
    """NLL of the saturated model (observed frequencies), the lower bound of :func:`negative_log_likelihood`."""
    total = 0.0
    for ds in problem.datasets:
        c = ds.counts.buckets().astype(float)
        nz = c > 0
        total -= float(np.dot(c[nz], np.log(c[nz] / c.sum())))
    return total


def _diameter(simplex: np.ndarray) -> float:
    diff = simplex[:, None, :] - simplex[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def _hessian(f, x: np.ndarray, h: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # central differences; the stencil is shifted inside the bounds when x sits near one
    x = np.clip(x, lo + 2 * h, hi - 2 * h)
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    e = np.eye(d) * h
    for i in range(d):
        H[i, i] = (f(x + e[i]) - 2 * f0 + f(x - e[i])) / h ** 2
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (f(x + e[i] + e[j]) - f(x + e[i] - e[j])
                                 - f(x - e[i] + e[j]) + f(x - e[i] - e[j])) / (4 * h ** 2)
    return H


def _half_widths(problem: CalibrationProblem, x: np.ndarray):
    params = problem.free_parameters
    lo = np.array([p.bounds[0] for p in params])
    hi = np.array([p.bounds[1] for p in params])
    n = max(problem.total_trials, 1)

    def per_trial(v):
        return negative_log_likelihood(problem, v, check_bounds=False) / n

    H = _hessian(per_trial, x, HESSIAN_STEP, lo, hi)
    w, V = np.linalg.eigh(H)
    flat = w < FLAT_CURVATURE
    flagged = np.zeros(len(params), dtype=bool)
    for k in np.flatnonzero(flat):
        flagged |= np.abs(V[:, k]) > 1e-3
    widths = np.full(len(params), math.inf)
    good = ~flat
    if good.any():
        # covariance restricted to the identified subspace
        cov = (V[:, good] / (w[good] * n)) @ V[:, good].T
        widths = Z95 * np.sqrt(np.maximum(np.diag(cov), 0.0))
    widths[flagged] = math.inf
    return widths, tuple(p.label for p, f in zip(params, flagged) if f)


def fit_systematic(problem: CalibrationProblem, seed: int, n_starts: int = 4,
                   max_iter: int = 4000) -> CalibrationResult:
    """Multi-start Nelder-Mead over the bounded offsets.

    Start 0 is the nominal point (zero offsets); the others are drawn
    uniformly inside the bounds from ``seed``.  The best objective wins,
    ties going to the lower start index.  A start counts as converged when
    its final simplex diameter is below ``1e-6`` rad.
    """
    params = problem.free_parameters
    if not problem.datasets:
        raise InvalidArgumentError("calibration needs at least one dataset")
    if not params:
        raise InvalidArgumentError("calibration needs at least one free parameter")
    lo = np.array([p.bounds[0] for p in params])
    hi = np.array([p.bounds[1] for p in params])
    width = hi - lo
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA1]))
    starts = [np.clip(np.zeros(len(params)), lo, hi)]
    for _ in range(n_starts - 1):
        starts.append(lo + width * rng.uniform(0.1, 0.9, len(params)))
    n = max(problem.total_trials, 1)

    def objective(v):
        return negative_log_likelihood(problem, np.clip(v, lo, hi), check_bounds=False) / n

    runs = []
    for k, x0 in enumerate(starts):
        simplex = [x0]
        for i in range(len(params)):
            v = x0.copy()
            step = 0.1 * width[i]
            v[i] += step if x0[i] + step <= hi[i] else -step
            simplex.append(v)
        res = minimize(objective, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"initial_simplex": np.array(simplex), "xatol": CONVERGED_DIAMETER / 10,
                                "fatol": math.inf, "maxiter": max_iter * len(params),
                                "maxfev": max_iter * len(params) * 2})
        diam = _diameter(res.final_simplex[0])
        runs.append((float(res.fun), k, np.clip(res.x, lo, hi), int(res.nit), diam < CONVERGED_DIAMETER))

    converged_runs = [r for r in runs if r[4]]
    pool = converged_runs or runs
    best = min(pool, key=lambda r: (r[0], r[1]))
    fun, k, x, nit, conv = best
    widths, flagged = _half_widths(problem, x)
    return CalibrationResult(
        parameters=params,
        estimates=x,
        objective_value=negative_log_likelihood(problem, x, check_bounds=False),
        iterations=nit,
        converged=conv,
        half_widths=widths,
        unidentified=flagged,
        start_index=k,
        starts=[{"start": r[1], "objective": r[0] * n, "converged": r[4]} for r in runs],
    )


def corrected_plan(nominal: CircuitPlan, result: CalibrationResult) -> CircuitPlan:
    """Pre-compensated settings: each fitted offset subtracted from its nominal value.

    Parameters the data could not identify are left at nominal.
    """
    if not result.converged:
        raise CalibrationRefused("refusing to correct from an unconverged calibration")
    gates = list(nominal.gates)
    for p, v in zip(result.parameters, result.estimates):
        if p.label in result.unidentified:
            continue
        g = gates[p.gate]
        if isinstance(g, BeamSplitter):
            if p.angle == "theta":
                gates[p.gate] = BeamSplitter(g.j, g.theta - v, g.phi)
            else:
                gates[p.gate] = BeamSplitter(g.j, g.theta, g.phi - v)
        else:
            ph = list(g.phases)
            ph[p.mode] -= v
            gates[p.gate] = PhaseDiagonal(tuple(ph))
    return CircuitPlan(nominal.n, tuple(gates))
