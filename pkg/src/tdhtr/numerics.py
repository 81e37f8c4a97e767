"""Dense array helpers, seeded randomness and the finite-difference oracle.

Arrays are plain ``numpy.ndarray`` values of dtype float32 or float64.
Shapes must match exactly: nothing in this package relies on broadcasting
between operands, and the binary helpers here refuse to broadcast.
"""

import zlib

import numpy as np

from .exceptions import DimensionError, DomainError, NumericError

DTYPES = (np.float32, np.float64)

# PCG64 (O'Neill's permuted congruential generator, 128-bit state, 64-bit
# output) as shipped by numpy. Its stream is fixed for a given seed
# independent of platform.
RNG_ALGORITHM = "PCG64"


def as_tensor(x, dtype=np.float64):
    a = np.asarray(x, dtype=dtype)
    if a.dtype.type not in DTYPES:
        raise DomainError(f"unsupported dtype {a.dtype}")
    return a


def check_finite(x, what="array"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains NaN or Inf")
    return x


def check_same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


class Rng:
    """Seeded random stream.

    ``Rng(seed).child("td_image")`` derives an independent sub-stream by
    mixing the seed with a component tag, so adding draws in one component
    never shifts the stream seen by another.
    """

    def __init__(self, seed, tag=None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.tag = tag
        entropy = [self.seed]
        if tag is not None:
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, tag):
        full = tag if self.tag is None else f"{self.tag}/{tag}"
        return Rng(self.seed, full)

    def uniform(self, size):
        return self._gen.random(size)

    def normal(self, size, std=1.0, dtype=np.float64):
        return (self._gen.standard_normal(size) * std).astype(dtype)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def bernoulli_vector(rng, length, keep_prob):
    """Vector of independent {0,1} draws, 1 with probability ``keep_prob``.

    Consumes exactly ``length`` uniform draws from ``rng``.
    """
    if not 0.0 <= keep_prob <= 1.0:
        raise DomainError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    u = rng.uniform(int(length))
    return (u < keep_prob).astype(np.int8)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, dout):
    return dout @ b.T, a.T @ dout


def sigmoid(x):
    # tanh form never overflows for large |x|
    out = np.tanh(x * 0.5)
    out *= 0.5
    out += 0.5
    return out


def sigmoid_grad(y):
    """Derivative expressed through the output ``y = sigmoid(x)``."""
    return y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y):
    return 1.0 - y * y


def leaky_relu(x, alpha=0.2):
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_grad(x, alpha=0.2):
    return np.where(x >= 0, 1.0, alpha).astype(x.dtype)


def add(a, b):
    check_same_shape(a, b)
    return a + b


def mul(a, b):
    check_same_shape(a, b)
    return a * b


def elementwise(op, *args, alpha=0.2):
    """Dispatch by name: add, mul, sigmoid, tanh, leaky_relu."""
    unary = {"sigmoid": sigmoid, "tanh": tanh}
    if op in unary:
        return unary[op](*args)
    if op == "leaky_relu":
        return leaky_relu(*args, alpha=alpha)
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    raise DomainError(f"unknown elementwise op {op!r}")


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (float64 only)."""
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise DomainError("finite differences require float64 input")
    x = x.copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-12):
    """Norm-wise relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
