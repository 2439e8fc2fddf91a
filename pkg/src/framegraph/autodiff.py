"""Reverse-mode automatic differentiation over dense 2-D tensors.

All values are 64-bit floats in row-major order.  A ``Tape`` records every
differentiable operation as it executes; ``backward`` replays the records in
reverse to populate gradient buffers, and ``sgd_step`` applies the plain
stochastic-gradient update with optional weight decay.

Shapes are strict: operands must match exactly or satisfy the matmul rule.
There is no broadcasting.  Gradients accumulate additively when a tensor
feeds more than one consumer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError

__all__ = [
    "Tensor",
    "Tape",
    "Record",
    "SgdConfig",
    "parameter",
    "constant",
    "backward",
    "sgd_step",
    "zero_grads",
    "DIFFERENTIABLE_OPS",
]


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D; got an array of shape {arr.shape}")
    return arr


class Tensor:
    """Dense 2-D float64 array with an optional gradient buffer.

    The gradient buffer is allocated lazily during ``backward`` and only for
    tensors with ``requires_grad`` set.
    """

    __slots__ = ("values", "grad", "requires_grad", "produced")

    def __init__(self, values, requires_grad: bool = False, *, _wrap: bool = False):
        self.values = values if _wrap else _as_matrix(values)
        if not np.isfinite(self.values).all():
            raise NumericError("tensor holds non-finite values")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.produced = False  # True for outputs of tape operations

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> Tensor:
    """A learnable tensor: participates in differentiation and SGD updates."""
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(values)


class Record:
    """One executed operation: kind, operands, output, saved intermediates."""

    __slots__ = ("kind", "inputs", "out", "saved")

    def __init__(self, kind: str, inputs: tuple, out: Tensor, saved=None):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.saved = saved


class Tape:
    """Ordered record of operations, in execution (hence topological) order.

    A tape and its tensors are single-threaded; independent tapes may run
    concurrently against read-only parameter snapshots.  Pass ``record=False``
    for forward-only evaluation.
    """

    def __init__(self, record: bool = True):
        self.records: list[Record] = []
        self.parameters: list[Tensor] = []
        self._param_ids: set[int] = set()
        self.record = record

    def _emit(self, kind: str, inputs: tuple, values: np.ndarray, saved=None) -> Tensor:
        if not np.isfinite(values).all():
            raise NumericError(f"operation '{kind}' produced non-finite values")
        out = Tensor(values, _wrap=True)
        out.produced = True
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                break
        if self.record and out.requires_grad:
            self.records.append(Record(kind, inputs, out, saved))
            for t in inputs:
                if t.requires_grad and not t.produced and id(t) not in self._param_ids:
                    self._param_ids.add(id(t))
                    self.parameters.append(t)
        return out

    # -- linear algebra ------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape[1] != b.values.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {a.values.shape} @ {b.values.shape}"
            )
        return self._emit("matmul", (a, b), a.values @ b.values)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape != b.values.shape:
            raise ShapeError(f"add needs equal shapes: {a.values.shape} vs {b.values.shape}")
        return self._emit("add", (a, b), a.values + b.values)

    def multiply(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape != b.values.shape:
            raise ShapeError(
                f"multiply needs equal shapes: {a.values.shape} vs {b.values.shape}"
            )
        return self._emit("multiply", (a, b), a.values * b.values)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        factor = float(factor)
        return self._emit("scale", (a,), a.values * factor, saved=factor)

    def add_row(self, a: Tensor, row: Tensor) -> Tensor:
        """Add a 1xN row vector to every row of ``a`` (bias addition)."""
        if row.values.shape != (1, a.values.shape[1]):
            raise ShapeError(
                f"add_row needs a (1, {a.values.shape[1]}) row, got {row.values.shape}"
            )
        return self._emit("add_row", (a, row), a.values + row.values)

    def transpose(self, a: Tensor) -> Tensor:
        return self._emit("transpose", (a,), np.ascontiguousarray(a.values.T))

    # -- structural ----------------------------------------------------

    def select_rows(self, a: Tensor, indices) -> Tensor:
        idx = np.asarray(indices, dtype=np.intp).ravel()
        n = a.values.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"row index out of range for {n} rows")
        return self._emit("select_rows", (a,), a.values[idx], saved=idx)

    def select_cols(self, a: Tensor, indices) -> Tensor:
        idx = np.asarray(indices, dtype=np.intp).ravel()
        n = a.values.shape[1]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"column index out of range for {n} columns")
        return self._emit("select_cols", (a,), np.ascontiguousarray(a.values[:, idx]), saved=idx)

    def stack_rows(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("stack_rows needs at least one tensor")
        width = parts[0].values.shape[1]
        for p in parts:
            if p.values.shape[1] != width:
                raise ShapeError(
                    f"stack_rows needs equal widths: {width} vs {p.values.shape[1]}"
                )
        bounds = np.cumsum([0] + [p.values.shape[0] for p in parts])
        values = np.concatenate([p.values for p in parts], axis=0)
        return self._emit("stack_rows", tuple(parts), values, saved=bounds)

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("concat_cols needs at least one tensor")
        height = parts[0].values.shape[0]
        for p in parts:
            if p.values.shape[0] != height:
                raise ShapeError(
                    f"concat_cols needs equal heights: {height} vs {p.values.shape[0]}"
                )
        bounds = np.cumsum([0] + [p.values.shape[1] for p in parts])
        values = np.concatenate([p.values for p in parts], axis=1)
        return self._emit("concat_cols", tuple(parts), values, saved=bounds)

    def reshape(self, a: Tensor, n_rows: int, n_cols: int) -> Tensor:
        if n_rows * n_cols != a.values.size:
            raise ShapeError(
                f"cannot reshape {a.values.shape} to ({n_rows}, {n_cols})"
            )
        return self._emit("reshape", (a,), a.values.reshape(n_rows, n_cols))

    def gather_rows(self, a: Tensor, indices: np.ndarray) -> Tensor:
        """Gather rows into fixed-width windows; index -1 yields a zero row.

        ``indices`` has shape (P, Q); the output has shape (P, Q*cols) where
        window q of output row p holds row ``indices[p, q]`` of ``a``.  Used
        to lay out convolution patches for all frames in one matrix.
        """
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 2:
            raise ShapeError("gather_rows needs a 2-D index array")
        n, cols = a.values.shape
        if idx.size and (idx.min() < -1 or idx.max() >= n):
            raise IndexError(f"gather index out of range for {n} rows")
        ext = np.concatenate([a.values, np.zeros((1, cols))], axis=0)
        flat = idx.ravel()
        values = ext[flat].reshape(idx.shape[0], idx.shape[1] * cols)
        return self._emit("gather_rows", (a,), values, saved=flat)

    def mean_pool_rows(self, a: Tensor, groups: np.ndarray) -> Tensor:
        """Average fixed-size groups of rows (used for 2x2 spatial pooling)."""
        grp = np.asarray(groups, dtype=np.intp)
        if grp.ndim != 2:
            raise ShapeError("mean_pool_rows needs a 2-D group-index array")
        n = a.values.shape[0]
        if grp.size and (grp.min() < 0 or grp.max() >= n):
            raise IndexError(f"pool index out of range for {n} rows")
        values = a.values[grp].mean(axis=1)
        return self._emit("mean_pool_rows", (a,), values, saved=grp)

    # -- reductions and nonlinearities ----------------------------------

    def mean_over_rows(self, a: Tensor) -> Tensor:
        """Column means: out[0, j] is the average of column j over all rows."""
        return self._emit("mean_over_rows", (a,), a.values.mean(axis=0, keepdims=True))

    def sum_all(self, a: Tensor) -> Tensor:
        return self._emit("sum_all", (a,), np.array([[a.values.sum()]]))

    def leaky_relu(self, a: Tensor, slope: float = 0.2) -> Tensor:
        if not 0.0 < slope < 1.0:
            raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
        # Derivative at exactly 0 is the slope (left limit), so the factor
        # array doubles as the saved local derivative.
        factor = np.where(a.values > 0.0, 1.0, slope)
        return self._emit("leaky_relu", (a,), a.values * factor, saved=factor)

    def sigmoid(self, a: Tensor) -> Tensor:
        v = a.values
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return self._emit("sigmoid", (a,), out)

    def tanh(self, a: Tensor) -> Tensor:
        return self._emit("tanh", (a,), np.tanh(a.values))

    def activation(self, kind: str, a: Tensor, slope: float = 0.2) -> Tensor:
        if kind == "leaky_relu":
            return self.leaky_relu(a, slope)
        if kind == "sigmoid":
            return self.sigmoid(a)
        if kind == "tanh":
            return self.tanh(a)
        raise ConfigError(f"unknown activation kind '{kind}'")

    def softmax_vector(self, a: Tensor) -> Tensor:
        """Stable softmax of a 1xN row: positive outputs summing to 1.

        Entries more than 700 below the max are clamped before
        exponentiation so no output underflows to exact zero; the
        perturbation is below 1e-300 and invisible at any tolerance.
        """
        if a.values.shape[0] != 1 or a.values.shape[1] < 1:
            raise ShapeError(f"softmax_vector needs a 1xN row, got {a.values.shape}")
        shifted = np.maximum(a.values - a.values.max(), -700.0)
        e = np.exp(shifted)
        out = e / e.sum()
        return self._emit("softmax_vector", (a,), out, saved=out)

    def cross_entropy(self, logits: Tensor, label: int) -> Tensor:
        """Negative log softmax probability of ``label``; returns a scalar."""
        if logits.values.shape[0] != 1:
            raise ShapeError(f"cross_entropy needs 1xK logits, got {logits.values.shape}")
        k = logits.values.shape[1]
        label = int(label)
        if not 0 <= label < k:
            raise IndexError(f"class label {label} out of range for {k} logits")
        v = logits.values
        m = v.max()
        z = v - m
        ez = np.exp(z)
        probs = ez / ez.sum()
        z_label = z[0, label]
        if z_label >= -30.0:
            # The label is at or near the max: log1p over the other terms
            # avoids the cancellation of log(1 + tiny).
            w = np.exp(z - z_label)
            rest = w[0, :label].sum() + w[0, label + 1 :].sum()
            loss = np.array([[np.log1p(rest)]])
        else:
            loss = np.array([[np.log(ez.sum()) - z_label]])
        return self._emit("cross_entropy", (logits,), loss, saved=(probs, label))

    def stop_gradient(self, a: Tensor) -> Tensor:
        """Identity in the forward pass; contributes zero gradient backward."""
        out = Tensor(a.values.copy(), _wrap=True)
        out.produced = True
        return out


# -- backward rules ------------------------------------------------------


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.values.shape)
    t.grad += g


def _bw_matmul(rec: Record) -> None:
    a, b = rec.inputs
    g = rec.out.grad
    _acc(a, g @ b.values.T)
    _acc(b, a.values.T @ g)


def _bw_add(rec: Record) -> None:
    g = rec.out.grad
    _acc(rec.inputs[0], g)
    _acc(rec.inputs[1], g)


def _bw_multiply(rec: Record) -> None:
    a, b = rec.inputs
    g = rec.out.grad
    _acc(a, g * b.values)
    _acc(b, g * a.values)


def _bw_scale(rec: Record) -> None:
    _acc(rec.inputs[0], rec.out.grad * rec.saved)


def _bw_add_row(rec: Record) -> None:
    a, row = rec.inputs
    g = rec.out.grad
    _acc(a, g)
    _acc(row, g.sum(axis=0, keepdims=True))


def _bw_transpose(rec: Record) -> None:
    _acc(rec.inputs[0], rec.out.grad.T)


def _bw_select_rows(rec: Record) -> None:
    (a,) = rec.inputs
    if not a.requires_grad:
        return
    buf = np.zeros(a.values.shape)
    np.add.at(buf, rec.saved, rec.out.grad)
    _acc(a, buf)


def _bw_select_cols(rec: Record) -> None:
    (a,) = rec.inputs
    if not a.requires_grad:
        return
    buf = np.zeros(a.values.shape)
    np.add.at(buf.T, rec.saved, rec.out.grad.T)
    _acc(a, buf)


def _bw_stack_rows(rec: Record) -> None:
    bounds = rec.saved
    g = rec.out.grad
    for i, part in enumerate(rec.inputs):
        _acc(part, g[bounds[i] : bounds[i + 1]])


def _bw_concat_cols(rec: Record) -> None:
    bounds = rec.saved
    g = rec.out.grad
    for i, part in enumerate(rec.inputs):
        _acc(part, g[:, bounds[i] : bounds[i + 1]])


def _bw_reshape(rec: Record) -> None:
    (a,) = rec.inputs
    _acc(a, rec.out.grad.reshape(a.values.shape))


def _bw_gather_rows(rec: Record) -> None:
    (a,) = rec.inputs
    if not a.requires_grad:
        return
    n, cols = a.values.shape
    g = rec.out.grad.reshape(-1, cols)
    buf = np.zeros((n + 1, cols))
    np.add.at(buf, rec.saved, g)
    _acc(a, buf[:n])


def _bw_mean_pool_rows(rec: Record) -> None:
    (a,) = rec.inputs
    if not a.requires_grad:
        return
    grp = rec.saved
    share = rec.out.grad / grp.shape[1]
    buf = np.zeros(a.values.shape)
    np.add.at(buf, grp.ravel(), np.repeat(share, grp.shape[1], axis=0))
    _acc(a, buf)


def _bw_mean_over_rows(rec: Record) -> None:
    (a,) = rec.inputs
    m = a.values.shape[0]
    _acc(a, np.repeat(rec.out.grad / m, m, axis=0))


def _bw_sum_all(rec: Record) -> None:
    (a,) = rec.inputs
    _acc(a, np.full(a.values.shape, rec.out.grad[0, 0]))


def _bw_leaky_relu(rec: Record) -> None:
    _acc(rec.inputs[0], rec.out.grad * rec.saved)


def _bw_sigmoid(rec: Record) -> None:
    s = rec.out.values
    _acc(rec.inputs[0], rec.out.grad * s * (1.0 - s))


def _bw_tanh(rec: Record) -> None:
    t = rec.out.values
    _acc(rec.inputs[0], rec.out.grad * (1.0 - t * t))


def _bw_softmax_vector(rec: Record) -> None:
    s = rec.saved
    g = rec.out.grad
    inner = float((g * s).sum())
    _acc(rec.inputs[0], s * (g - inner))


def _bw_cross_entropy(rec: Record) -> None:
    probs, label = rec.saved
    g = probs.copy()
    g[0, label] -= 1.0
    _acc(rec.inputs[0], rec.out.grad[0, 0] * g)


_BACKWARD: dict[str, Callable[[Record], None]] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "multiply": _bw_multiply,
    "scale": _bw_scale,
    "add_row": _bw_add_row,
    "transpose": _bw_transpose,
    "select_rows": _bw_select_rows,
    "select_cols": _bw_select_cols,
    "stack_rows": _bw_stack_rows,
    "concat_cols": _bw_concat_cols,
    "reshape": _bw_reshape,
    "gather_rows": _bw_gather_rows,
    "mean_pool_rows": _bw_mean_pool_rows,
    "mean_over_rows": _bw_mean_over_rows,
    "sum_all": _bw_sum_all,
    "leaky_relu": _bw_leaky_relu,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "softmax_vector": _bw_softmax_vector,
    "cross_entropy": _bw_cross_entropy,
}

#: Every operation kind the tape can differentiate.
DIFFERENTIABLE_OPS = frozenset(_BACKWARD)


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Populate gradient buffers by traversing the tape once, in reverse.

    ``loss`` must be a 1x1 tensor.  Every tensor in ``params`` (default: the
    tape's collected parameters) is guaranteed a gradient buffer afterwards;
    parameters that do not reach the loss receive exact zeros.
    """
    if loss.values.shape != (1, 1):
        raise ShapeError(f"loss must be a scalar (1x1), got {loss.values.shape}")
    loss.grad = np.ones((1, 1))
    for rec in reversed(tape.records):
        if rec.out.grad is None:
            continue
        _BACKWARD[rec.kind](rec)
    targets = tape.parameters if params is None else params
    for p in targets:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros(p.values.shape)


@dataclass(frozen=True)
class SgdConfig:
    """Plain SGD settings: step size and L2 weight decay."""

    learning_rate: float = 0.001
    weight_decay: float = 0.00005

    def __post_init__(self):
        # lr = 0 is allowed so that the no-op update is expressible.
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


def sgd_step(params: Sequence[Tensor], cfg: SgdConfig) -> None:
    """Update ``p <- p - lr * (grad + weight_decay * p)``, then clear grads."""
    for p in params:
        if p.grad is None:
            raise StateError("parameter has no gradient; run backward before sgd_step")
        if cfg.weight_decay:
            p.values -= cfg.learning_rate * (p.grad + cfg.weight_decay * p.values)
        else:
            p.values -= cfg.learning_rate * p.grad
        if not np.isfinite(p.values).all():
            raise NumericError("sgd_step produced non-finite parameter values")
        p.grad = None


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
