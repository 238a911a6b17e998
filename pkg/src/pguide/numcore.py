"""Float64 tensor plumbing: checked matmul, analytic layer gradients, Adam,
and a deterministic seedable RNG.

Conventions used throughout the package:

* every numeric carrier is a 2-D, C-contiguous float64 ndarray ("tensor"),
  validated by :func:`as_tensor2`;
* gradients are accumulated into :class:`ParamTensor.grad` by the paired
  ``*_backward`` functions, never overwritten;
* randomness always flows through an explicit :class:`Rng` so that a seed
  fully determines a run.

The RNG is SplitMix64 (Steele, Lea & Flood, "Fast splittable pseudorandom
number generators"): a 64-bit Weyl counter pushed through an avalanche mix.
Because each output depends only on the counter value, drawing a block of n
values is bit-identical to drawing them one at a time, and vectorizes.
Normal variates come from the basic Box-Muller transform applied to
consecutive uniform pairs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "TrainingError",
    "Rng",
    "ParamTensor",
    "as_tensor2",
    "require_finite",
    "matmul",
    "affine_forward",
    "affine_backward",
    "tanh_forward",
    "tanh_backward",
    "normal_sample",
    "zero_grads",
    "adam_step",
]


class ShapeError(ValueError):
    """Operand shapes violate the operation's contract."""


class TrainingError(RuntimeError):
    """Non-finite loss or gradient encountered during optimization.

    Carries the loss ``history`` recorded up to the failure so callers can
    inspect a divergence.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


# ---------------------------------------------------------------------------
# deterministic RNG

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)  # Weyl increment
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_LANE_SALT = np.uint64(0xD6E8FEB86659FD93)
_INV_2_53 = 2.0 ** -53


def _mix64(z):
    """SplitMix64 finalizer; uint64 scalar or array in, same shape out."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based deterministic random stream.

    ``state`` is the 64-bit Weyl counter; the k-th output after seeding is
    ``mix64(seed + k * GOLDEN)``, so equal seeds give equal sequences on any
    platform with exact uint64 arithmetic (float outputs additionally depend
    on the platform's libm in the last ulp).
    """

    def __init__(self, seed: int):
        self.state = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            counters = self.state + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
            self.state = self.state + _GOLDEN * np.uint64(n)
        return _mix64(counters)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1), 53-bit resolution."""
        return (self.u64(n) >> np.uint64(11)) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals, Box-Muller on consecutive uniform pairs.

        Pair (u1, u2) maps to r*cos(a), r*sin(a) with r = sqrt(-2 log(1-u1))
        and a = 2 pi u2; 1-u1 lies in (0, 1] so the log is always finite.
        """
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        a = (2.0 * np.pi) * u[1::2]
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(a)
        out[1::2] = r * np.sin(a)
        return out[:n]

    def integers(self, n: int, hi: int) -> np.ndarray:
        """``n`` integers uniform on [0, hi)."""
        if hi <= 0:
            raise ValueError("hi must be positive")
        idx = (self.uniform(n) * hi).astype(np.int64)
        return np.minimum(idx, hi - 1)  # guard the u*hi == hi rounding edge

    def spawn(self, lane: int) -> "Rng":
        """Independent child stream derived from (current state, lane)."""
        with np.errstate(over="ignore"):
            child = _mix64(self.state ^ (_LANE_SALT * np.uint64(int(lane) + 1)))
        return Rng(int(child))


def normal_sample(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """(rows x cols) tensor of i.i.d. standard normals drawn from ``rng``."""
    return rng.normal(rows * cols).reshape(rows, cols)


# ---------------------------------------------------------------------------
# tensors and parameters


def as_tensor2(x, what: str = "tensor") -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array, rejecting other ranks."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {a.shape}")
    return a


def require_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite values in {what}")
    return a


class ParamTensor:
    """A trainable matrix paired with an accumulated gradient of equal shape."""

    def __init__(self, value, name: str = "param"):
        self.value = as_tensor2(value, name)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self._adam_m = None
        self._adam_v = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[:] = 0.0


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1) -> None:
    """Standard Adam update with bias correction, applied in place.

    ``t`` is the 1-based step count shared by all parameters. Raises
    :class:`TrainingError` naming the parameter if its gradient is non-finite.
    """
    if t < 1:
        raise ValueError("step count t must be >= 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter '{p.name}'")
        if p._adam_m is None:
            p._adam_m = np.zeros_like(p.value)
            p._adam_v = np.zeros_like(p.value)
        p._adam_m = beta1 * p._adam_m + (1.0 - beta1) * p.grad
        p._adam_v = beta2 * p._adam_v + (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p._adam_m / bc1
        v_hat = p._adam_v / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b) -> np.ndarray:
    a = as_tensor2(a, "matmul lhs")
    b = as_tensor2(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return require_finite(a @ b, "matmul output")


def affine_forward(x, W: ParamTensor, b: ParamTensor) -> np.ndarray:
    """y = x W + b for a batch of row vectors; b has shape (1, out)."""
    x = as_tensor2(x, "affine input")
    if x.shape[1] != W.value.shape[0]:
        raise ShapeError(
            f"affine input width {x.shape[1]} != weight rows {W.value.shape[0]}")
    if b.value.shape != (1, W.value.shape[1]):
        raise ShapeError(f"bias shape {b.value.shape} != (1, {W.value.shape[1]})")
    return require_finite(x @ W.value + b.value, "affine output")


def affine_backward(x, W: ParamTensor, b: ParamTensor, grad_out) -> np.ndarray:
    """Accumulate dL/dW and dL/db for ``affine_forward(x, W, b)``; return dL/dx.

    ``x`` must be the same batch the forward pass saw. The bias gradient is
    the column-sum of ``grad_out`` (one bias row broadcast over the batch).
    """
    x = as_tensor2(x, "affine input")
    grad_out = as_tensor2(grad_out, "affine upstream grad")
    if grad_out.shape != (x.shape[0], W.value.shape[1]):
        raise ShapeError(
            f"upstream grad shape {grad_out.shape} != ({x.shape[0]}, {W.value.shape[1]})")
    W.grad += x.T @ grad_out
    b.grad += grad_out.sum(axis=0, keepdims=True)
    return grad_out @ W.value.T


def tanh_forward(x) -> np.ndarray:
    # tanh(+-inf) is finite, so a silent pass-through would launder bad inputs
    return np.tanh(require_finite(as_tensor2(x, "tanh input"), "tanh input"))


def tanh_backward(y, grad_out) -> np.ndarray:
    """Chain-rule through tanh; ``y`` is the forward *output* tanh(x)."""
    y = as_tensor2(y, "tanh output")
    grad_out = as_tensor2(grad_out, "tanh upstream grad")
    if y.shape != grad_out.shape:
        raise ShapeError(f"tanh grad shape {grad_out.shape} != output {y.shape}")
    return grad_out * (1.0 - y * y)
