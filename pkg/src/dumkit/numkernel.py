"""Dense float64 matrix kernels, their analytic gradients, and Adam.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape/domain checks the rest of the package relies on and the
hand-written backward functions used by the variance network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An entry lies outside the domain of the requested function."""


class NonFiniteError(FloatingPointError):
    """A gradient or loss became NaN or infinite."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|), overflow-free
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _log(x: np.ndarray) -> np.ndarray:
    if np.any(x <= 0):
        raise DomainError("log of a non-positive entry")
    return np.log(x)


_UNARY = {"relu": relu, "exp": np.exp, "log": _log, "softplus": softplus}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply ``op`` entrywise.

    Unary ops are ``relu``, ``exp``, ``log`` and ``softplus``; binary ops
    (``add``, ``sub``, ``mul``) require operands of identical shape, no
    broadcasting.
    """
    a = np.asarray(a, dtype=DTYPE)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} takes one operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise TypeError(f"{op} takes two operands")
        b = np.asarray(b, dtype=DTYPE)
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def elementwise_backward(op: str, upstream: np.ndarray, a, b=None):
    """Gradient of ``sum(upstream * elementwise(op, a, b))`` w.r.t. the operands.

    Returns a single array for unary ops and a pair for binary ops. The relu
    subgradient at 0 is taken as 0.
    """
    a = np.asarray(a, dtype=DTYPE)
    if op == "relu":
        return upstream * (a > 0)
    if op == "exp":
        return upstream * np.exp(a)
    if op == "log":
        return upstream / a
    if op == "softplus":
        # sigmoid, written to avoid overflow on either tail
        e = np.exp(-np.abs(a))
        return upstream * np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    b = np.asarray(b, dtype=DTYPE)
    if op == "add":
        return upstream.copy(), upstream.copy()
    if op == "sub":
        return upstream.copy(), -upstream
    if op == "mul":
        return upstream * b, upstream * a
    raise ValueError(f"unknown elementwise op {op!r}")


def linear(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + bias`` for a batch of row vectors."""
    if bias.shape != (w.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} does not match weight {w.shape}")
    return matmul(x, w) + bias


def linear_backward(upstream: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_bias)`` for :func:`linear`."""
    return upstream @ w.T, x.T @ upstream, upstream.sum(axis=0)


@dataclass
class ParamTensor:
    value: np.ndarray
    grad: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass
class AdamState:
    """Moment estimates for one parameter tensor."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def for_param(cls, param: ParamTensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), **hyper)


def adam_step(param: ParamTensor, state: AdamState) -> None:
    """One bias-corrected Adam update, in place. ``param.grad`` is left untouched."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
        raise NonFiniteError(f"{bad} non-finite gradient entries at Adam step {state.step_count + 1}")
    if state.first_moment.shape != param.value.shape:
        raise DimensionError("Adam moment shape does not match parameter")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * g * g
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    param.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a named collection of parameters, stepped in a fixed order."""

    params: dict[str, ParamTensor]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(init=False)

    def __post_init__(self):
        self.states = {
            name: AdamState.for_param(
                p, beta1=self.beta1, beta2=self.beta2, eps=self.eps, learning_rate=self.learning_rate
            )
            for name, p in self.params.items()
        }

    def step(self) -> None:
        for name, p in self.params.items():
            adam_step(p, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
