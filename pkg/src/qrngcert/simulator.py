"""Single-photon propagation, outcome probabilities and heralded trial sampling.

Trial ``i`` of a run with seed ``s`` draws its herald and outcome from
counters ``2i`` and ``2i+1`` of a splitmix64 stream keyed by ``s``.  Results
therefore do not depend on how trials are split across workers.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels
from .circuit import RealizedCircuit
from .exceptions import DataError, InvalidArgumentError, PreconditionError

NORM_TOL = 1e-10


def basis_state(n: int, k: int) -> np.ndarray:
    """Photon prepared in mode ``k`` of ``n``."""
    if not 0 <= k < n:
        raise InvalidArgumentError(f"mode {k} out of range for {n} modes")
    psi = np.zeros(n, dtype=np.complex128)
    psi[k] = 1.0
    return psi


def stream_key(seed: int) -> int:
    """64-bit stream key derived from a user seed."""
    if int(seed) < 0:
        raise InvalidArgumentError(f"seed must be non-negative, got {seed}")
    return int(np.random.SeedSequence(int(seed)).generate_state(1, dtype=np.uint64)[0])


def _check_input(rc: RealizedCircuit, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.shape != (rc.n,):
        raise InvalidArgumentError(f"input has shape {psi.shape}, circuit has {rc.n} modes")
    norm = float(np.linalg.norm(psi))
    if abs(norm - 1.0) > NORM_TOL:
        raise PreconditionError(f"input state is not normalized (norm {norm!r})", measured=norm)
    return psi


def propagate(rc: RealizedCircuit, psi) -> np.ndarray:
    """Output amplitudes; loss scales them by the survival amplitude."""
    psi = _check_input(rc, psi)
    return rc.transfer @ psi


class OutcomeProbs(NamedTuple):
    modes: np.ndarray
    loss: float

    def buckets(self) -> np.ndarray:
        """Per-mode probabilities followed by the loss probability."""
        return np.append(self.modes, self.loss)


def outcome_probs(rc: RealizedCircuit, psi) -> OutcomeProbs:
    """Detection probability per output mode, and everything else as loss."""
    out = propagate(rc, psi)
    p = np.abs(out) ** 2 * rc.detector_efficiency
    return OutcomeProbs(p, max(0.0, 1.0 - float(p.sum())))


@dataclass(frozen=True)
class TrialOutcome:
    herald_fired: bool
    detected_mode: int | None = None

    def __post_init__(self):
        if self.detected_mode is not None and not self.herald_fired:
            raise InvalidArgumentError("a detection requires the herald to have fired")

    @classmethod
    def from_code(cls, code: int) -> "TrialOutcome":
        if code == kernels.UNHERALDED:
            return cls(False)
        if code == kernels.LOST:
            return cls(True)
        return cls(True, int(code))


@dataclass(frozen=True)
class CountsTable:
    trials: int
    herald_count: int
    mode_counts: tuple[int, ...]
    loss_count: int

    def __post_init__(self):
        object.__setattr__(self, "mode_counts", tuple(int(c) for c in self.mode_counts))
        if self.herald_count != sum(self.mode_counts) + self.loss_count:
            raise DataError("herald count must equal clicks plus losses")
        if any(c < 0 for c in (*self.mode_counts, self.loss_count)) or self.herald_count > self.trials:
            raise DataError("counts must be non-negative and bounded by the trial count")

    @property
    def n(self) -> int:
        return len(self.mode_counts)

    @property
    def detected(self) -> int:
        return sum(self.mode_counts)

    def buckets(self) -> np.ndarray:
        """Counts per mode followed by the loss count (the heralded categories)."""
        return np.array(self.mode_counts + (self.loss_count,), dtype=np.int64)

    @classmethod
    def empty(cls, n: int) -> "CountsTable":
        return cls(0, 0, (0,) * n, 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial_total", "herald", *(f"mode_{k}" for k in range(self.n)), "lost"])
        w.writerow([self.trials, self.herald_count, *self.mode_counts, self.loss_count])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountsTable":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) != 2:
            raise DataError(f"counts CSV needs a header and one row, got {len(rows)} rows")
        header, row = rows
        n = len(header) - 3
        expected = ["trial_total", "herald", *(f"mode_{k}" for k in range(n)), "lost"]
        if n < 1 or header != expected or len(row) != len(header):
            raise DataError(f"unexpected counts CSV header {header}")
        try:
            vals = [int(v) for v in row]
        except ValueError as exc:
            raise DataError(f"non-integer count in CSV: {exc}") from exc
        return cls(vals[0], vals[1], tuple(vals[2:-1]), vals[-1])

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "CountsTable":
        return cls.from_csv(Path(path).read_text())


def _cdf(rc: RealizedCircuit, psi) -> np.ndarray:
    return np.cumsum(outcome_probs(rc, psi).buckets())


def _spans(n: int, workers: int) -> list[tuple[int, int]]:
    step = math.ceil(n / workers)
    return [(lo, min(step, n - lo)) for lo in range(0, n, step)]


def sample_trials(rc: RealizedCircuit, psi, n: int, seed: int, workers: int = 1) -> CountsTable:
    """Run ``n`` heralded single-photon trials and tally the outcomes.

    ``workers > 1`` splits the trial range across threads; the compiled
    kernel releases the GIL.  The table is identical for any worker count.
    """
    if n < 0:
        raise InvalidArgumentError(f"trial count must be non-negative, got {n}")
    if n == 0:
        return CountsTable.empty(rc.n)
    cdf = _cdf(rc, psi)
    key = stream_key(seed)
    if workers <= 1:
        parts = [kernels.count_codes(key, 0, n, rc.herald_efficiency, cdf)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(
                lambda span: kernels.count_codes(key, span[0], span[1], rc.herald_efficiency, cdf),
                _spans(n, workers)))
    counts = np.sum(parts, axis=0)
    nm = rc.n
    return CountsTable(
        trials=n,
        herald_count=int(n - counts[nm + 1]),
        mode_counts=tuple(int(c) for c in counts[:nm]),
        loss_count=int(counts[nm]),
    )


def sample_stream(rc: RealizedCircuit, psi, n: int, seed: int) -> np.ndarray:
    """Per-trial outcome codes in trial order.

    Codes are the detected mode index, ``kernels.LOST`` (heralded, no click)
    or ``kernels.UNHERALDED``.  Tallying this stream reproduces
    :func:`sample_trials` for the same seed.
    """
    if n < 0:
        raise InvalidArgumentError(f"trial count must be non-negative, got {n}")
    if n == 0:
        return np.empty(0, dtype=np.int16)
    return kernels.sample_codes(stream_key(seed), 0, n, rc.herald_efficiency, _cdf(rc, psi))


def iter_outcomes(codes) -> Iterator[TrialOutcome]:
    for c in np.asarray(codes):
        yield TrialOutcome.from_code(int(c))


def tally(codes, n_modes: int) -> CountsTable:
    codes = np.asarray(codes, dtype=np.int64)
    clicks = np.bincount(codes[codes >= 0], minlength=n_modes)
    if clicks.size > n_modes:
        raise DataError(f"stream holds mode {clicks.size - 1} but circuit has {n_modes} modes")
    lost = int(np.count_nonzero(codes == kernels.LOST))
    return CountsTable(codes.size, int(clicks.sum()) + lost, tuple(int(c) for c in clicks), lost)


def interference_visibility(rc: RealizedCircuit, psi) -> float:
    """Raw fringe amplitude ``|<psi|M psi>|`` of the device placed in one interferometer arm.

    ``M`` includes loss.  With the other arm carrying ``psi`` and a path
    phase ``delta``, the bright-port probability is
    ``(1 + |M psi|^2 + 2 Re(e^{i delta} <psi|M psi>)) / 4``; its
    peak-to-peak swing over ``delta`` equals this value.
    """
    psi = _check_input(rc, psi)
    return float(abs(np.vdot(psi, rc.transfer @ psi)))


def fringe_contrast(rc: RealizedCircuit, psi) -> float:
    """Loss-normalized contrast ``2|<psi|M psi>| / (1 + |M psi|^2)``."""
    psi = _check_input(rc, psi)
    out = rc.transfer @ psi
    return float(2 * abs(np.vdot(psi, out)) / (1.0 + np.vdot(out, out).real))
