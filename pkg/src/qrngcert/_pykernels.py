"""Pure numpy implementations of the sampling and counting kernels.

Bit-for-bit equivalent to the compiled ``_ckernels`` module; used when the
extension is not built.
"""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 2.0 ** -53

CHUNK = 1 << 18

UNHERALDED = -1
LOST = -2


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _uniforms(key, counters):
    # counter c of stream `key` is splitmix64 output number c
    state = np.uint64(key) + (counters + np.uint64(1)) * GAMMA
    return (_mix(state) >> np.uint64(11)).astype(np.float64) * _TO_UNIT


def _draw(key, start, n, herald, cdf):
    i = np.arange(start, start + n, dtype=np.uint64)
    u_herald = _uniforms(key, np.uint64(2) * i)
    u_pick = _uniforms(key, np.uint64(2) * i + np.uint64(1))
    bucket = np.searchsorted(cdf[:-1], u_pick, side="right")
    return u_herald < herald, bucket


def sample_codes(key, start, n, herald, cdf):
    """Outcome code per trial: mode index, ``LOST`` or ``UNHERALDED``."""
    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    nmodes = cdf.shape[0] - 1
    out = np.empty(n, dtype=np.int16)
    for lo in range(0, n, CHUNK):
        m = min(CHUNK, n - lo)
        fired, bucket = _draw(key, start + lo, m, herald, cdf)
        codes = bucket.astype(np.int16)
        codes[bucket == nmodes] = LOST
        codes[~fired] = UNHERALDED
        out[lo:lo + m] = codes
    return out


def count_codes(key, start, n, herald, cdf):
    """Counts per bucket (modes..., lost) followed by the unheralded count."""
    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    nb = cdf.shape[0]
    counts = np.zeros(nb + 1, dtype=np.int64)
    for lo in range(0, n, CHUNK):
        m = min(CHUNK, n - lo)
        fired, bucket = _draw(key, start + lo, m, herald, cdf)
        counts[:nb] += np.bincount(bucket[fired], minlength=nb)
        counts[nb] += m - int(fired.sum())
    return counts


def von_neumann(bits):
    b = np.ascontiguousarray(bits, dtype=np.uint8)
    pairs = b[: b.size // 2 * 2].reshape(-1, 2)
    keep = pairs[:, 0] != pairs[:, 1]
    return pairs[keep, 0].copy()


def block_counts(digits, base, m):
    d = np.ascontiguousarray(digits, dtype=np.uint8)
    nblocks = d.size // m
    blocks = d[: nblocks * m].reshape(nblocks, m).astype(np.int64)
    weights = base ** np.arange(m - 1, -1, -1, dtype=np.int64)
    words = blocks @ weights
    return np.bincount(words, minlength=base ** m).astype(np.int64)
