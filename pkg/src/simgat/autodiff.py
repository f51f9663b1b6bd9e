"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

Operations are recorded on the active :class:`Tape` (a dynamic Wengert list)
whenever one of their inputs is tracked, i.e. requires a gradient or was
itself produced on that tape.  Outside a ``with Tape():`` block the same
functions simply evaluate, which is what finite-difference checks use.

Every recorded node keeps two backward rules:

* ``vjp`` - the ordinary vector-Jacobian product used by :meth:`Tape.gradient`;
* ``deeplift`` - the same propagation with local derivatives replaced by
  finite-difference multipliers taken between an input run and a reference
  run of an identical op sequence (see :func:`propagate_multipliers`).

Broadcasting follows numpy's trailing-dimension alignment; gradients flowing
into a broadcast operand are summed back to its shape.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

# |x - x_ref| below this uses the derivative instead of the secant slope
RESCALE_EPS = 1e-7

_DEBUG = False
_TAPES: list["Tape"] = []


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/inf (raises FloatingPointError)."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def debug_mode(flag: bool = True):
    prev = _DEBUG
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


class Tensor:
    """A float64 array with an optional position on a tape."""

    __array_priority__ = 1000
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor operator

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.node: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, node={self.node})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    saved: dict = field(default_factory=dict)


class Tape:
    """Append-only record of the ops executed while the tape is active.

    Nodes are appended as they execute, so inputs always precede outputs and a
    reversed scan is a valid reverse topological order.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` keyed by ``id(tensor)``.

        Covers every tensor that influenced the loss on this tape, leaves
        included.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, _VJP[node.kind](g, node)):
                if gi is None or not self.tracks(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradient arrays for ``params`` (zeros where a param is unused)."""
        grads = self.backward(loss)
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(kind: str, inputs: tuple[Tensor, ...], data: np.ndarray, **saved) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from op '{kind}'")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        out.node = len(tape.nodes)
        out._tape = tape
        tape.nodes.append(Node(kind, inputs, out, saved))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# forward ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return _emit("add", (a, b), a.data + b.data)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return _emit("sub", (a, b), a.data - b.data)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    return _emit("mul", (a, b), a.data * b.data)


def div(a, b) -> Tensor:
    """Elementwise quotient; the caller keeps denominators away from zero."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    return _emit("div", (a, b), a.data / b.data)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError("matmul: scalars are not allowed")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return _emit("matmul", (a, b), np.matmul(a.data, b.data))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: shapes {[t.shape for t in ts]} mismatch on axis {axis}") from None
    sizes = [t.shape[axis] for t in ts]
    return _emit("concat", ts, data, axis=axis, sizes=sizes)


def slice_(a, index) -> Tensor:
    """Basic (int/slice/None/Ellipsis) indexing only."""
    a = as_tensor(a)
    idx = index if isinstance(index, tuple) else (index,)
    for part in idx:
        if not (part is None or part is Ellipsis or isinstance(part, (int, np.integer, slice))):
            raise TypeError("slice: only basic indexing is supported")
    return _emit("slice", (a,), a.data[index], index=index)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _emit("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.size(data), 1) if a.data.size else 1
    return _emit("mean", (a,), data, axis=axis, keepdims=keepdims, count=count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit("reshape", (a,), a.data.reshape(shape))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", (a,), np.transpose(a.data, axes), axes=axes)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _emit("exp", (a,), np.exp(a.data))


def ln(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("ln: argument must be positive")
    return _emit("ln", (a,), np.log(a.data))


def clip_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    return _emit("clip_min", (a,), np.maximum(a.data, floor), floor=floor)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    return _emit("sigmoid", (a,), _sigmoid(a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _emit("tanh", (a,), np.tanh(a.data))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    return _emit("leaky_relu", (a,), np.where(a.data > 0, a.data, slope * a.data), slope=slope)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _emit("softplus", (a,), _softplus(a.data))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction."""
    a = as_tensor(a)
    return _emit("softmax", (a,), _softmax(a.data, axis), axis=axis)


def stop_gradient(a) -> Tensor:
    """A constant copy: downstream ops do not see through it."""
    return Tensor(as_tensor(a).data.copy())


# --------------------------------------------------------------------------
# vector-Jacobian products


def _vjp_add(g, node):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(g, node):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _bilinear_mul(g, a, b, shape_a, shape_b):
    return _unbroadcast(g * b, shape_a), _unbroadcast(g * a, shape_b)


def _vjp_mul(g, node):
    a, b = node.inputs
    return _bilinear_mul(g, a.data, b.data, a.shape, b.shape)


def _vjp_div(g, node):
    a, b = node.inputs
    ga = g / b.data
    gb = -g * a.data / (b.data * b.data)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _matmul_grads(g, a, b):
    """Gradients of ``np.matmul(a, b)`` for 1-D/2-D/batched operands."""
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
    gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
    ga = _unbroadcast(ga, a2.shape)
    gb = _unbroadcast(gb, b2.shape)
    return ga.reshape(a.shape), gb.reshape(b.shape)


def _vjp_matmul(g, node):
    a, b = node.inputs
    return _matmul_grads(g, a.data, b.data)


def _vjp_concat(g, node):
    axis = node.saved["axis"]
    bounds = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _vjp_slice(g, node):
    (a,) = node.inputs
    ga = np.zeros_like(a.data)
    ga[node.saved["index"]] += g
    return (ga,)


def _expand_reduced(g, node):
    (a,) = node.inputs
    axis = node.saved["axis"]
    if axis is not None and not node.saved["keepdims"]:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def _vjp_sum(g, node):
    return (np.array(_expand_reduced(g, node)),)


def _vjp_mean(g, node):
    return (_expand_reduced(g, node) / node.saved["count"],)


def _vjp_reshape(g, node):
    return (g.reshape(node.inputs[0].shape),)


def _vjp_transpose(g, node):
    axes = node.saved["axes"]
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


# derivative of each elementwise op given input x and output y
_DERIV: dict[str, Callable] = {
    "exp": lambda x, y, s: y,
    "ln": lambda x, y, s: 1.0 / x,
    "sigmoid": lambda x, y, s: y * (1.0 - y),
    "tanh": lambda x, y, s: 1.0 - y * y,
    "leaky_relu": lambda x, y, s: np.where(x > 0, 1.0, s["slope"]),
    "softplus": lambda x, y, s: _sigmoid(x),
    "clip_min": lambda x, y, s: (x > s["floor"]).astype(np.float64),
}


def _vjp_unary(g, node):
    x = node.inputs[0].data
    return (g * _DERIV[node.kind](x, node.out.data, node.saved),)


def _vjp_softmax(g, node):
    s = node.out.data
    axis = node.saved["axis"]
    return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)


_VJP: dict[str, Callable] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "matmul": _vjp_matmul,
    "concat": _vjp_concat,
    "slice": _vjp_slice,
    "sum": _vjp_sum,
    "mean": _vjp_mean,
    "reshape": _vjp_reshape,
    "transpose": _vjp_transpose,
    "softmax": _vjp_softmax,
}
_VJP.update({k: _vjp_unary for k in _DERIV})

_LINEAR_KINDS = {"add", "sub", "concat", "slice", "sum", "mean", "reshape", "transpose"}


# --------------------------------------------------------------------------
# DeepLIFT multipliers


def _secant(x, x0, y, y0, deriv):
    dx = x - x0
    small = np.abs(dx) < RESCALE_EPS
    return np.where(small, deriv, (y - y0) / np.where(small, 1.0, dx))


def _dl_unary(g, nx, nr):
    x, x0 = nx.inputs[0].data, nr.inputs[0].data
    y, y0 = nx.out.data, nr.out.data
    deriv = _DERIV[nx.kind](x, y, nx.saved)
    return (g * _secant(x, x0, y, y0, deriv),)


def _dl_mul(g, nx, nr):
    # a*b - a0*b0 = mean(a)(b - b0) + mean(b)(a - a0), exactly
    a, b = nx.inputs
    a0, b0 = nr.inputs
    am = 0.5 * (a.data + a0.data)
    bm = 0.5 * (b.data + b0.data)
    return _bilinear_mul(g, am, bm, a.shape, b.shape)


def _dl_div(g, nx, nr):
    # a/b = a * r(b) with r the reciprocal, rescaled
    a, b = nx.inputs
    a0, b0 = nr.inputs
    r, r0 = 1.0 / b.data, 1.0 / b0.data
    am = 0.5 * (a.data + a0.data)
    rm = 0.5 * (r + r0)
    slope = _secant(b.data, b0.data, r, r0, -r * r)
    return _unbroadcast(g * rm, a.shape), _unbroadcast(g * am * slope, b.shape)


def _dl_matmul(g, nx, nr):
    a, b = nx.inputs
    a0, b0 = nr.inputs
    return _matmul_grads(g, 0.5 * (a.data + a0.data), 0.5 * (b.data + b0.data))


def _dl_softmax(g, nx, nr):
    # p = E / S with E = exp(x - shift) on a shift shared by both runs, so
    # exp is rescaled elementwise and the quotient split exactly as in _dl_div
    axis = nx.saved["axis"]
    x, x0 = nx.inputs[0].data, nr.inputs[0].data
    shift = np.maximum(np.max(x, axis=axis, keepdims=True), np.max(x0, axis=axis, keepdims=True))
    e, e0 = np.exp(x - shift), np.exp(x0 - shift)
    s, s0 = e.sum(axis=axis, keepdims=True), e0.sum(axis=axis, keepdims=True)
    m_exp = _secant(x, x0, e, e0, e)
    r, r0 = 1.0 / s, 1.0 / s0
    m_rec = _secant(s, s0, r, r0, -r * r)
    em = 0.5 * (e + e0)
    rm = 0.5 * (r + r0)
    # d(out_k) = rm * dE_k + em_k * m_rec * sum_l dE_l
    g_e = g * rm + np.sum(g * em, axis=axis, keepdims=True) * m_rec
    return (g_e * m_exp,)


_DL: dict[str, Callable] = {k: _dl_unary for k in _DERIV}
_DL.update({"mul": _dl_mul, "div": _dl_div, "matmul": _dl_matmul, "softmax": _dl_softmax})


def propagate_multipliers(
    tape: Tape, ref_tape: Tape, output: Tensor, ref_output: Tensor, inputs: Iterable[Tensor]
) -> list[np.ndarray]:
    """DeepLIFT multipliers of a scalar ``output`` with respect to ``inputs``.

    ``tape`` and ``ref_tape`` must hold the same op sequence, evaluated on the
    actual and the reference input respectively.  Elementwise nonlinearities
    use the Rescale rule while linear ops keep their exact Jacobian.  Products
    and quotients take the split that makes the decomposition of output
    differences exact, so ``sum(m * (x - x_ref))`` reproduces ``output - ref_output`` up to
    rounding whenever no Rescale fallback is triggered.
    """
    if output.size != 1:
        raise ValueError(f"attribution target must be scalar, got shape {output.shape}")
    if output._tape is not tape or ref_output._tape is not ref_tape:
        raise ValueError("attribution target has no recorded graph (zero depth)")
    if output.node != ref_output.node:
        raise ValueError("input and reference runs diverged")
    mult: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for k in range(output.node, -1, -1):
        nx, nr = tape.nodes[k], ref_tape.nodes[k]
        if nx.kind != nr.kind or nx.out.shape != nr.out.shape:
            raise ValueError(f"input and reference runs diverged at node {k}")
        g = mult.pop(id(nx.out), None)
        if g is None:
            continue
        rule = _DL.get(nx.kind)
        parts = _VJP[nx.kind](g, nx) if rule is None else rule(g, nx, nr)
        for t, gi in zip(nx.inputs, parts):
            if gi is None or not tape.tracks(t):
                continue
            key = id(t)
            mult[key] = mult[key] + gi if key in mult else gi
    return [mult.get(id(t), np.zeros_like(t.data)) for t in inputs]


# --------------------------------------------------------------------------
# gradient checking


def grad_check(
    closure: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> dict:
    """Compare tape gradients against central finite differences.

    ``closure`` rebuilds the scalar loss from the current parameter values.
    The relative error per entry is ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    with Tape() as tape:
        loss = closure()
        analytic = tape.gradient(loss, list(params.values()))
    report = {"h": h, "tolerance": tolerance, "params": {}}
    worst = 0.0
    for (name, p), g_ad in zip(params.items(), analytic):
        flat = p.data.reshape(-1)
        g_fd = np.empty(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(closure().data)
            flat[idx] = orig - h
            down = float(closure().data)
            flat[idx] = orig
            g_fd[idx] = (up - down) / (2.0 * h)
        g_ad = g_ad.reshape(-1)
        rel = np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
        err = float(rel.max()) if rel.size else 0.0
        worst = max(worst, err)
        report["params"][name] = {"size": int(flat.size), "max_rel_err": err, "passed": err < tolerance}
    report["max_rel_err"] = worst
    report["passed"] = worst < tolerance
    return report
