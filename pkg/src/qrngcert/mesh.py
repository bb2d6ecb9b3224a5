"""Gate netlists for beam-splitter meshes and the rectangular (Clements) decomposition.

A :class:`CircuitPlan` lists gates in the order a photon meets them.  The
matrix of a plan puts the last-applied gate leftmost::

    reconstruct([g0, g1, g2]) == M(g2) @ M(g1) @ M(g0)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from .exceptions import InvalidArgumentError, PreconditionError
from .matrix import embed_t, phase_diagonal, unitarity_deviation

#: below this modulus a nulling target is treated as exactly zero
DEGENERATE_TOL = 1e-14

#: input tolerance accepted by :func:`clements_decompose`
UNITARY_INPUT_TOL = 1e-8


@dataclass(frozen=True)
class BeamSplitter:
    """``T(theta, phi)`` acting on modes ``j`` and ``j + 1``."""

    j: int
    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise InvalidArgumentError("beam splitter angles must be finite")

    def matrix(self, n: int) -> np.ndarray:
        return embed_t(n, self.j, self.theta, self.phi)


@dataclass(frozen=True)
class PhaseDiagonal:
    """``diag(exp(i*phases))`` acting on every mode at once."""

    phases: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if not all(math.isfinite(p) for p in self.phases):
            raise InvalidArgumentError("phases must be finite")

    def matrix(self, n: int) -> np.ndarray:
        return phase_diagonal(self.phases)


GateSpec = Union[BeamSplitter, PhaseDiagonal]


@dataclass(frozen=True)
class CircuitPlan:
    n: int
    gates: tuple[GateSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.n < 1:
            raise InvalidArgumentError(f"mode count must be positive, got {self.n}")
        for k, g in enumerate(self.gates):
            if isinstance(g, BeamSplitter):
                if not 0 <= g.j <= self.n - 2:
                    raise InvalidArgumentError(f"gate {k}: mode index {g.j} out of range for n={self.n}")
            elif isinstance(g, PhaseDiagonal):
                if len(g.phases) != self.n:
                    raise InvalidArgumentError(
                        f"gate {k}: phase diagonal has {len(g.phases)} phases, expected {self.n}")
            else:
                raise InvalidArgumentError(f"gate {k}: unknown gate type {type(g).__name__}")

    def __len__(self):
        return len(self.gates)

    @property
    def beam_splitters(self) -> int:
        return sum(isinstance(g, BeamSplitter) for g in self.gates)

    def then(self, other: "CircuitPlan") -> "CircuitPlan":
        """Plan that runs ``self`` and then ``other``."""
        if other.n != self.n:
            raise InvalidArgumentError(f"cannot chain {self.n}-mode and {other.n}-mode plans")
        return CircuitPlan(self.n, self.gates + other.gates)


def reconstruct(plan: CircuitPlan) -> np.ndarray:
    """Transfer matrix of ``plan``; the last-applied gate is the leftmost factor."""
    u = np.eye(plan.n, dtype=np.complex128)
    for g in plan.gates:
        u = g.matrix(plan.n) @ u
    return u


def invert_plan(plan: CircuitPlan) -> CircuitPlan:
    """Mirror netlist: reversed order, every angle and phase negated.

    Each splitter becomes the pair ``BS(-theta, 0)`` followed by
    ``BS(0, -phi)`` because ``T(theta, phi)^dagger = T(0, -phi) T(-theta, 0)``.
    """
    out: list[GateSpec] = []
    for g in reversed(plan.gates):
        if isinstance(g, BeamSplitter):
            out.append(BeamSplitter(g.j, -g.theta, 0.0))
            out.append(BeamSplitter(g.j, 0.0, -g.phi))
        else:
            out.append(PhaseDiagonal(tuple(-p for p in g.phases)))
    return CircuitPlan(plan.n, tuple(out))


# -- decomposition -----------------------------------------------------------

def _null_from_right(x: complex, y: complex) -> tuple[float, float]:
    # [x, y] @ T^dagger has first entry x cos(t) - i e^{-i p} sin(t) y; zero it
    if abs(x) < DEGENERATE_TOL:
        return 0.0, 0.0
    return math.atan2(abs(x), abs(y)), float(np.angle(1j * y) - np.angle(x))


def _null_from_left(x: complex, y: complex) -> tuple[float, float]:
    # lower entry of T @ [x, y] is i sin(t) x + e^{i p} cos(t) y; zero it
    if abs(y) < DEGENERATE_TOL:
        return 0.0, 0.0
    return math.atan2(abs(y), abs(x)), float(np.angle(-1j * x) - np.angle(y))


def _wrap(a: float) -> float:
    return float(math.remainder(a, 2 * math.pi))


def clements_decompose(u) -> CircuitPlan:
    """Decompose a unitary into a rectangular mesh of splitters plus one phase layer.

    Off-diagonal entries are nulled along successive anti-diagonals,
    alternating right multiplication by ``T^dagger`` (columns) and left
    multiplication by ``T`` (rows).  The left factors are then commuted
    through the residual diagonal using

        T(t, p)^-1 diag(d1, d2) = diag(d1, e^{-ip} d1) T(-t, arg(d2/d1))

    which leaves ``U = D T_1 ... T_k`` with at most ``N(N-1)/2`` splitters.
    Identity splitters and an all-zero phase layer are dropped from the
    emitted plan, so the identity decomposes to an empty plan.

    Raises
    ------
    PreconditionError
        If ``u`` deviates from unitarity by more than ``1e-8``; the measured
        deviation is attached as ``measured``.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[0] < 1:
        raise InvalidArgumentError(f"expected a square matrix, got shape {u.shape}")
    dev = unitarity_deviation(u)
    if not dev <= UNITARY_INPUT_TOL:
        raise PreconditionError(f"matrix is not unitary (deviation {dev:.3e})", measured=dev)

    n = u.shape[0]
    v = u.copy()
    right: list[tuple[int, float, float]] = []
    left: list[tuple[int, float, float]] = []
    for i in range(n - 1):
        if i % 2 == 0:
            for j in range(i + 1):
                r, c = n - 1 - j, i - j
                t, p = _null_from_right(v[r, c], v[r, c + 1])
                right.append((c, t, p))
                v = v @ embed_t(n, c, t, p).conj().T
        else:
            for j in range(1, i + 2):
                r, c = n + j - i - 2, j - 1
                t, p = _null_from_left(v[r - 1, c], v[r, c])
                left.append((r - 1, t, p))
                v = embed_t(n, r - 1, t, p) @ v

    d = np.diag(v).copy()
    d /= np.abs(d)
    middle: list[tuple[int, float, float]] = []
    for k, t, p in reversed(left):
        d1, d2 = d[k], d[k + 1]
        middle.insert(0, (k, -t, float(np.angle(d2 / d1))))
        d[k + 1] = np.exp(-1j * p) * d1

    # U = D . middle[0] ... middle[-1] . right[-1] ... right[0]
    gates: list[GateSpec] = []
    for k, t, p in right + middle[::-1]:
        if abs(t) < DEGENERATE_TOL and abs(_wrap(p)) < DEGENERATE_TOL:
            continue
        gates.append(BeamSplitter(k, t, p))
    phases = [float(a) for a in np.angle(d)]
    if any(abs(_wrap(a)) >= DEGENERATE_TOL for a in phases):
        gates.append(PhaseDiagonal(tuple(phases)))
    return CircuitPlan(n, tuple(gates))


# -- the three-mode QRNG reference --------------------------------------------

B12_THETA = math.acos(math.sqrt(2.0 / 3.0))
B12_PHI = -math.pi / 2
B23_THETA = math.pi / 3
B23_PHI = math.pi
B12_PRIME_THETA = -B12_THETA
B12_PRIME_PHI = math.pi
#: alternative middle-coupler angle 2*pi/3; it flips the sign of that coupler's diagonal,
#: so netlists built with it miss U_x.  Kept for the mismatch check and never used.
TABULATED_B23_THETA = 2 * math.pi / 3

UX = 0.5 * np.array(
    [[1.0, math.sqrt(2.0), 1.0],
     [math.sqrt(2.0), 0.0, -math.sqrt(2.0)],
     [1.0, -math.sqrt(2.0), 1.0]],
    dtype=np.complex128,
)
UX.setflags(write=False)


class UxReference(NamedTuple):
    matrix: np.ndarray
    inverse_form: CircuitPlan
    primed_form: CircuitPlan


def ux_plan(form: str = "primed", b23_theta: float = B23_THETA) -> CircuitPlan:
    """One of the two canonical three-splitter netlists for ``U_x``.

    ``"inverse"`` is ``B12^-1 . B23 . D . B12`` and ``"primed"`` is
    ``D' . B12' . B23 . B12`` (matrix-product order, so B12 is met first in both).
    """
    b12 = BeamSplitter(0, B12_THETA, B12_PHI)
    b23 = BeamSplitter(1, b23_theta, B23_PHI)
    if form == "inverse":
        return CircuitPlan(3, (
            b12,
            PhaseDiagonal((0.0, math.pi, math.pi)),
            b23,
            BeamSplitter(0, -B12_THETA, 0.0),
            BeamSplitter(0, 0.0, -B12_PHI),
        ))
    if form == "primed":
        return CircuitPlan(3, (
            b12,
            b23,
            BeamSplitter(0, B12_PRIME_THETA, B12_PRIME_PHI),
            PhaseDiagonal((0.0, math.pi / 2, math.pi)),
        ))
    raise InvalidArgumentError(f"unknown U_x form {form!r} (expected 'inverse' or 'primed')")


def ux_reference() -> UxReference:
    return UxReference(UX.copy(), ux_plan("inverse"), ux_plan("primed"))


def dft_matrix(n: int) -> np.ndarray:
    """Balanced ``n``-port (DFT) unitary; every output has probability ``1/n`` from any input."""
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


# -- plan files ------------------------------------------------------------

def plan_to_dict(plan: CircuitPlan) -> dict:
    gates = []
    for g in plan.gates:
        if isinstance(g, BeamSplitter):
            gates.append({"kind": "bs", "j": g.j, "theta": g.theta, "phi": g.phi})
        else:
            gates.append({"kind": "pd", "phases": list(g.phases)})
    return {"n": plan.n, "gates": gates}


def plan_from_dict(d: dict) -> CircuitPlan:
    try:
        n = int(d["n"])
        gates: list[GateSpec] = []
        for entry in d["gates"]:
            kind = entry["kind"]
            if kind == "bs":
                gates.append(BeamSplitter(int(entry["j"]), float(entry["theta"]), float(entry["phi"])))
            elif kind == "pd":
                gates.append(PhaseDiagonal(tuple(float(p) for p in entry["phases"])))
            else:
                raise InvalidArgumentError(f"unknown gate kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"malformed plan document: {exc}") from exc
    return CircuitPlan(n, tuple(gates))


def dumps_plan(plan: CircuitPlan) -> str:
    # floats are written with repr, which round-trips bit-exactly
    return json.dumps(plan_to_dict(plan), indent=2) + "\n"


def save_plan(plan: CircuitPlan, path) -> None:
    Path(path).write_text(dumps_plan(plan))


def load_plan(path) -> CircuitPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    return plan_from_dict(doc)


def parse_matrix(doc) -> np.ndarray:
    """Parse a matrix document: rows of numbers, complex strings (``"0.5-0.5j"``) or ``[re, im]`` pairs.

    Accepts either a bare list of rows or ``{"matrix": rows}``.
    """
    if isinstance(doc, dict):
        if "matrix" not in doc:
            raise InvalidArgumentError("matrix document has no 'matrix' key")
        doc = doc["matrix"]
    rows = doc

    def entry(x):
        if isinstance(x, (int, float)):
            return complex(x)
        if isinstance(x, str):
            return complex(x.replace(" ", "").replace("i", "j"))
        if isinstance(x, Sequence) and len(x) == 2:
            return complex(float(x[0]), float(x[1]))
        raise InvalidArgumentError(f"cannot parse matrix entry {x!r}")

    try:
        m = np.array([[entry(x) for x in row] for row in rows], dtype=np.complex128)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed matrix: {exc}") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise InvalidArgumentError(f"matrix must be square and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("matrix has non-finite entries")
    return m


def load_matrix(path) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    return parse_matrix(doc)
