"""Digit extraction and the statistical battery run on QRNG output."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from . import kernels
from .exceptions import ConfigError, DataError, InvalidArgumentError, PreconditionError
from .simulator import TrialOutcome

BOREL_BOUND_FORMULA = "sqrt(log2(n)/n), n = digit count"

_PACK_MAGIC = b"QRD1"


@dataclass(frozen=True, eq=False)
class DigitSequence:
    base: int
    digits: np.ndarray

    def __post_init__(self):
        if self.base not in (2, 3):
            raise InvalidArgumentError(f"base must be 2 or 3, got {self.base}")
        d = np.ascontiguousarray(self.digits, dtype=np.int64)
        if d.ndim != 1:
            raise InvalidArgumentError("digits must be one-dimensional")
        if d.size and (d.min() < 0 or d.max() >= self.base):
            raise DataError(f"digit out of range for base {self.base}")
        d = d.astype(np.uint8)
        d.setflags(write=False)
        object.__setattr__(self, "digits", d)

    def __len__(self):
        return int(self.digits.size)

    def __eq__(self, other):
        if not isinstance(other, DigitSequence):
            return NotImplemented
        return self.base == other.base and np.array_equal(self.digits, other.digits)

    __hash__ = None

    def counts(self) -> np.ndarray:
        return np.bincount(self.digits, minlength=self.base)


def digits_from_trials(stream, mapping: Mapping[int, int] | None = None, base: int = 3) -> DigitSequence:
    """Turn detection events into digits; lost and unheralded trials are dropped.

    ``stream`` holds :class:`TrialOutcome` objects or raw outcome codes
    (mode index, ``kernels.LOST``, ``kernels.UNHERALDED``).  ``mapping``
    sends mode index to digit and defaults to the identity.
    """
    if isinstance(stream, np.ndarray):
        codes = stream.astype(np.int64)
    else:
        codes = np.array([_code(x) for x in stream], dtype=np.int64)
    modes = codes[codes >= 0]
    if mapping is None:
        if modes.size and modes.max() >= base:
            raise DataError(f"mode {int(modes.max())} has no digit in base {base}")
        return DigitSequence(base, modes)
    lut = np.full(max([*mapping.keys(), int(modes.max()) if modes.size else 0]) + 1, -1, dtype=np.int64)
    for mode, digit in mapping.items():
        lut[int(mode)] = int(digit)
    digits = lut[modes]
    if (digits < 0).any():
        raise DataError(f"mode {int(modes[digits < 0][0])} is not in the digit mapping")
    return DigitSequence(base, digits)


def _code(x) -> int:
    if isinstance(x, TrialOutcome):
        if not x.herald_fired:
            return kernels.UNHERALDED
        return kernels.LOST if x.detected_mode is None else x.detected_mode
    return int(x)


class ChiSquareResult(NamedTuple):
    statistic: float
    dof: int
    passed: bool
    p_value: float


def chi_square_frequency(seq: DigitSequence, expected: Sequence[float],
                         significance: float = 1e-3) -> ChiSquareResult:
    """Pearson goodness-of-fit of the digit frequencies against ``expected``."""
    p = np.asarray(expected, dtype=float)
    if p.shape != (seq.base,):
        raise ConfigError(f"expected distribution needs {seq.base} entries, got {p.size}")
    if np.any(p <= 0):
        raise ConfigError("expected probabilities must all be positive")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError(f"expected probabilities sum to {p.sum()}, not 1")
    n = len(seq)
    if n == 0:
        raise PreconditionError("cannot test an empty sequence")
    e = n * p
    stat = float(np.sum((seq.counts() - e) ** 2 / e))
    dof = seq.base - 1
    pval = float(stats.chi2.sf(stat, dof))
    return ChiSquareResult(stat, dof, pval >= significance, pval)


@dataclass(frozen=True)
class BorelResult:
    passed: bool
    bound: float
    n: int
    max_block: int
    #: per block length m: array of |freq(w) - base^-m| indexed by word value
    deviations: dict
    per_block_pass: dict
    formula: str = BOREL_BOUND_FORMULA

    def worst(self, m: int) -> float:
        return float(np.max(self.deviations[m]))


def borel_normality(seq: DigitSequence, max_block: int = 2) -> BorelResult:
    """Finite-sample Borel normality over non-overlapping blocks of length 1..max_block.

    Every word ``w`` of length ``m`` must satisfy
    ``|freq(w) - base**-m| <= sqrt(log2(n)/n)`` with ``n`` the digit count.
    The trailing partial block is dropped.
    """
    if max_block < 1:
        raise InvalidArgumentError("max_block must be >= 1")
    n = len(seq)
    need = seq.base ** (2 * max_block)
    if n < need:
        raise PreconditionError(
            f"sequence too short: {n} digits, need at least {need} for max_block={max_block}", measured=n)
    bound = math.sqrt(math.log2(n) / n)
    devs, ok = {}, {}
    for m in range(1, max_block + 1):
        counts = kernels.block_counts(seq.digits, seq.base, m)
        freq = counts / (n // m)
        devs[m] = np.abs(freq - seq.base ** -m)
        ok[m] = bool(np.all(devs[m] <= bound))
    return BorelResult(all(ok.values()), bound, n, max_block, devs, ok)


OUTER = "outer"
SPLIT = "split"
_SPLIT_CODES = {0: (0, 0), 1: (0, 1), 2: (1, 1)}


def to_bits(seq: DigitSequence, scheme: str = OUTER) -> DigitSequence:
    """Ternary to binary.

    ``outer``: 0 -> 0, 2 -> 1, 1 dropped (unbiased when the outer outcomes
    are equally likely).  ``split``: 0 -> 00, 1 -> 01, 2 -> 11.
    """
    if seq.base != 3:
        raise InvalidArgumentError("to_bits expects a ternary sequence")
    d = seq.digits
    if scheme == OUTER:
        return DigitSequence(2, (d[d != 1] // 2))
    if scheme == SPLIT:
        table = np.array([_SPLIT_CODES[k] for k in range(3)], dtype=np.uint8)
        return DigitSequence(2, table[d].reshape(-1))
    raise InvalidArgumentError(f"unknown scheme {scheme!r}")


def von_neumann_extract(bits: DigitSequence) -> DigitSequence:
    """Pairwise debiasing: 01 -> 0, 10 -> 1, 00 and 11 discarded."""
    if bits.base != 2:
        raise InvalidArgumentError("von Neumann extraction expects bits")
    return DigitSequence(2, kernels.von_neumann(bits.digits))


def bias_sigma(n: int) -> float:
    """Standard deviation of the fraction of ones in ``n`` fair bits."""
    return 0.5 / math.sqrt(n) if n else math.inf


# -- stream files --------------------------------------------------------------

def dumps_text(seq: DigitSequence) -> str:
    return "".join(map(str, seq.digits.tolist())) + "\n"


def loads_text(text: str, base: int = 3) -> DigitSequence:
    s = text.strip()
    if s and not set(s) <= set("0123456789"[:base]):
        raise DataError(f"stream contains characters outside base {base}")
    return DigitSequence(base, np.frombuffer(s.encode(), dtype=np.uint8) - ord("0"))


def pack(seq: DigitSequence) -> bytes:
    """Packed binary: ``b"QRD1"``, base byte, digit count (uint64 LE), then digits.

    Ternary digits use 2 bits and bits 1 bit, most significant first within
    each byte; the last byte is padded with zero bits.
    """
    width = 2 if seq.base == 3 else 1
    per_byte = 8 // width
    d = seq.digits
    pad = (-d.size) % per_byte
    padded = np.concatenate([d, np.zeros(pad, dtype=np.uint8)]).reshape(-1, per_byte).astype(np.uint16)
    shifts = np.arange(per_byte - 1, -1, -1) * width
    body = (padded << shifts).sum(axis=1).astype(np.uint8).tobytes()
    return _PACK_MAGIC + struct.pack("<BQ", seq.base, d.size) + body


def unpack(data: bytes) -> DigitSequence:
    if data[:4] != _PACK_MAGIC or len(data) < 13:
        raise DataError("not a packed digit stream")
    base, n = struct.unpack("<BQ", data[4:13])
    if base not in (2, 3):
        raise DataError(f"unsupported base {base}")
    width = 2 if base == 3 else 1
    per_byte = 8 // width
    body = np.frombuffer(data[13:], dtype=np.uint8)
    if body.size != -(-n // per_byte):
        raise DataError("packed stream length does not match its header")
    shifts = np.arange(per_byte - 1, -1, -1) * width
    d = ((body[:, None] >> shifts) & ((1 << width) - 1)).reshape(-1)[:n]
    return DigitSequence(base, d)


def save_text(seq: DigitSequence, path) -> None:
    Path(path).write_text(dumps_text(seq))


def save_packed(seq: DigitSequence, path) -> None:
    Path(path).write_bytes(pack(seq))
