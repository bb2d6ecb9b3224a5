"""Small dense complex linear algebra for mesh unitaries.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.
Every constructor here returns a fresh array; nothing mutates its inputs.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .exceptions import InvalidArgumentError

#: absolute tolerance for "equals" on matrices built from closed-form constants
ATOL = 1e-10


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"angle must be finite, got {v!r}")


def as_matrix(m) -> np.ndarray:
    """Coerce ``m`` to a 2-D complex array and check it is finite."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidArgumentError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("matrix has non-finite entries")
    return a


def t_block(theta: float, phi: float) -> np.ndarray:
    r"""2x2 beam-splitter block with an input phase on the second port.

    .. math::

        T(\theta, \varphi) = \begin{pmatrix} \cos\theta & i e^{i\varphi}\sin\theta \\
                                             i\sin\theta & e^{i\varphi}\cos\theta \end{pmatrix}

    ``cos(theta)`` is the reflectivity amplitude and ``sin(theta)`` the
    transmittance amplitude.
    """
    _finite(theta, phi)
    c, s = math.cos(theta), math.sin(theta)
    e = complex(math.cos(phi), math.sin(phi))
    return np.array([[c, 1j * e * s], [1j * s, e * c]], dtype=np.complex128)


def embed_t(n: int, j: int, theta: float, phi: float) -> np.ndarray:
    """Embed :func:`t_block` on modes ``(j, j+1)`` of an ``n``-mode identity."""
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 modes, got n={n}")
    if not 0 <= j <= n - 2:
        raise InvalidArgumentError(f"mode index j={j} out of range for n={n} (0 <= j <= n-2)")
    m = np.eye(n, dtype=np.complex128)
    m[j:j + 2, j:j + 2] = t_block(theta, phi)
    return m


def phase_diagonal(phases: Sequence[float]) -> np.ndarray:
    p = np.asarray(phases, dtype=float)
    if p.ndim != 1 or p.size < 1 or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("phases must be a non-empty finite 1-D sequence")
    return np.diag(np.exp(1j * p))


def spin1_observable(theta: float, phi: float) -> np.ndarray:
    """Spin-1 observable along the direction with polar angle ``theta`` and azimuth ``phi``.

    ``spin1_observable(0, 0)`` is S_z and ``spin1_observable(pi/2, 0)`` is S_x.
    """
    _finite(theta, phi)
    c = math.cos(theta)
    s = math.sin(theta) / math.sqrt(2.0)
    ep = complex(math.cos(phi), math.sin(phi))
    em = ep.conjugate()
    return np.array(
        [[c, em * s, 0.0],
         [ep * s, 0.0, em * s],
         [0.0, ep * s, -c]],
        dtype=np.complex128,
    )


def dagger(m) -> np.ndarray:
    return as_matrix(m).conj().T


def multiply_chain(ms: Sequence, n: int | None = None) -> np.ndarray:
    """Left-to-right product ``ms[0] @ ms[1] @ ...``.

    An empty chain returns the ``n x n`` identity, so ``n`` is required then.
    """
    if len(ms) == 0:
        if n is None or n < 1:
            raise InvalidArgumentError("empty chain needs a positive dimension n")
        return np.eye(n, dtype=np.complex128)
    out = as_matrix(ms[0])
    if n is not None and out.shape[0] != n:
        raise InvalidArgumentError(f"first factor has {out.shape[0]} rows, expected {n}")
    for k, m in enumerate(ms[1:], start=1):
        m = as_matrix(m)
        if out.shape[1] != m.shape[0]:
            raise InvalidArgumentError(
                f"factor {k} has shape {m.shape}, not conformable with {out.shape}")
        out = out @ m
    return out


def _square(m) -> np.ndarray:
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {a.shape}")
    return a


def unitarity_deviation(m) -> float:
    """Frobenius norm of ``M^dagger M - I``."""
    a = _square(m)
    return float(np.linalg.norm(a.conj().T @ a - np.eye(a.shape[0])))


def identity_deviation(m) -> float:
    """Distance from ``M`` to the nearest ``e^{i alpha} I`` in Frobenius norm.

    The optimal phase is ``alpha = arg(trace M)``; the norm is evaluated
    directly rather than through the expanded quadratic, which would lose
    half the significant digits near zero.
    """
    a = _square(m)
    tr = np.trace(a)
    alpha = np.angle(tr) if abs(tr) > 0 else 0.0
    return float(np.linalg.norm(a - np.exp(1j * alpha) * np.eye(a.shape[0])))


def is_unitary(m, atol: float = ATOL) -> bool:
    return unitarity_deviation(m) <= atol
