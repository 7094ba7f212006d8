"""Dense numpy tensors with reverse-mode automatic differentiation.

Every operation the rest of the package composes lives here: broadcasting
arithmetic, matmul, strided 2D convolution and its transpose, batched
bilinear plane sampling, reductions, prefix sums and the usual activations.

The graph is built eagerly while the forward pass runs and is released by
:meth:`Tensor.backward` unless ``retain_graph`` is requested.
"""

from __future__ import annotations

import contextlib
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "SGD",
    "Adam",
    "backward",
    "grad_check",
    "GradCheckNaNError",
    "no_grad",
    "default_dtype",
    "set_default_dtype",
    "precision",
    "concat",
    "stack",
    "conv2d",
    "conv_transpose2d",
    "grid_sample_planes",
    "mse",
]

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. float64 for grad checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _as_array(x, dtype=None) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype or _DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array that records how it was computed.

    Attributes:
        data: the values (row-major ``np.ndarray``).
        grad: accumulated gradient with the same shape, or ``None``.
        requires_grad: whether gradients flow into this tensor.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), _backward=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if not tracked:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    # -- elementwise arithmetic ------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other

        def _bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), _bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other

        def _bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), _bw)

    def __rsub__(self, other):
        return Tensor(_as_array(other, self.dtype)) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other

        def _bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), _bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other

        def _bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), _bw)

    def __rtruediv__(self, other):
        return Tensor(_as_array(other, self.dtype)) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        return Tensor._make(a.data**exponent, (a,), lambda g: a._accum(g * exponent * a.data ** (exponent - 1)))

    def square(self):
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul expects operands with ndim >= 2")

        def _bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        return Tensor._make(a.data @ b.data, (a, b), _bw)

    # -- unary functions -------------------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._make(a.data * mask, (a,), lambda g: a._accum(g * mask))

    def leaky_relu(self, slope: float = 0.1):
        a = self
        scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
        return Tensor._make(a.data * scale, (a,), lambda g: a._accum(g * scale))

    def sigmoid(self):
        a = self
        out = _sigmoid(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))

    def softplus(self):
        a = self
        x = a.data
        out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
        return Tensor._make(out, (a,), lambda g: a._accum(g * _sigmoid(x)))

    # -- reductions ------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def _bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(np.asarray(out, dtype=a.dtype), (a,), _bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def cumsum(self, axis: int = -1, exclusive: bool = False):
        """Prefix sum along ``axis``; ``exclusive`` drops the current element."""
        a = self
        out = np.cumsum(a.data, axis=axis)
        if exclusive:
            out = out - a.data

        def _bw(g):
            rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
            a._accum(rev - g if exclusive else rev)

        return Tensor._make(out, (a,), _bw)

    # -- shape manipulation ----------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        if isinstance(idx, Tensor):
            idx = idx.data
        a = self
        out = a.data[idx]

        advanced = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

        def _bw(g):
            full = np.zeros_like(a.data)
            if advanced:
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            a._accum(full)

        return Tensor._make(np.array(out, copy=True), (a,), _bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Parameter(Tensor):
    """A named leaf tensor owned by a model.

    Frozen parameters (``trainable=False``) never receive gradients, so
    optimizers skip them.
    """

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(np.array(_as_array(data), dtype=dtype or _DEFAULT_DTYPE, copy=True), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None

    @property
    def tensor(self) -> "Parameter":
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


# -- graph traversal ----------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every tracked ancestor of a scalar ``loss``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tracked tensor")
    order = _topo_order(loss)
    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if not retain_graph:
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None


# -- multi-input ops -----------------------------------------------------------
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def _bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)

    return Tensor._make(out, tensors, _bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def _bw(g):
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis))

    return Tensor._make(out, tensors, _bw)


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over every element."""
    b = b if isinstance(b, Tensor) else Tensor(_as_array(b, a.dtype))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (a - b).square().mean()


# -- convolution -----------------------------------------------------------------
def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation on NCHW input with an (O, C, k, k) kernel."""
    B, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    s = stride
    xp = _pad(x.data, padding)
    Ho = (H + 2 * padding - k) // s + 1
    Wo = (W + 2 * padding - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    # win: (B, C, Ho, Wo, k, k)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def _bw(g):
        if w.requires_grad:
            w._accum(np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))  # (O, C, k, k)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            cols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)  # (B, C, k, k, Ho, Wo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += cols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accum(dxp)

    return Tensor._make(out, parents, _bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d`), kernel shape (C_in, C_out, k, k)."""
    B, C, H, W = x.shape
    Cw, O, k, _ = w.shape
    if Cw != C:
        raise ValueError(f"conv_transpose2d shape mismatch: x {x.shape}, w {w.shape}")
    s = stride
    Hf = (H - 1) * s + k
    Wf = (W - 1) * s + k
    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)  # (B, O, k, k, H, W)
    full = np.zeros((B, O, Hf, Wf), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + s * H : s, j : j + s * W : s] += cols[:, :, i, j]
    out = full[:, :, padding : Hf - padding, padding : Wf - padding]
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def _bw(g):
        gf = np.zeros((B, O, Hf, Wf), dtype=g.dtype)
        gf[:, :, padding : Hf - padding, padding : Wf - padding] = g
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))
        # window (h, w) of gf with offset (i, j) is what input pixel (h, w) scattered through w[:, :, i, j]
        gwin = np.lib.stride_tricks.sliding_window_view(gf, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :H, :W]
        if x.requires_grad:
            x._accum(np.tensordot(gwin, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w._accum(np.tensordot(x.data, gwin, axes=([0, 2, 3], [0, 2, 3])))

    return Tensor._make(out, parents, _bw)


# -- bilinear plane sampling ------------------------------------------------------
def grid_sample_planes(planes: Tensor, uv: Tensor) -> Tensor:
    """Bilinearly sample a stack of feature planes.

    Args:
        planes: (P, R, R, C) feature grids. Axis 1 follows ``u``, axis 2 ``v``.
        uv: (P, N, 2) coordinates in [-1, 1]; -1 and 1 hit the corner nodes
            exactly. Values outside are clamped to the edge.

    Returns:
        (P, N, C) interpolated features.
    """
    P, R, R2, C = planes.shape
    if R != R2:
        raise ValueError("planes must be square")
    if uv.shape[0] != P or uv.shape[-1] != 2:
        raise ValueError(f"uv shape {uv.shape} incompatible with planes {planes.shape}")
    N = uv.shape[1]
    scale = 0.5 * (R - 1)
    pos = (uv.data + 1.0) * scale
    inside = (pos > 0) & (pos < R - 1)
    pos = np.clip(pos, 0, R - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), max(R - 2, 0))
    frac = (pos - i0).astype(planes.dtype)
    i1 = np.minimum(i0 + 1, R - 1)
    fu, fv = frac[..., 0], frac[..., 1]
    base = (np.arange(P, dtype=np.int64) * R * R)[:, None]
    idx = np.stack(
        [
            base + i0[..., 0] * R + i0[..., 1],
            base + i0[..., 0] * R + i1[..., 1],
            base + i1[..., 0] * R + i0[..., 1],
            base + i1[..., 0] * R + i1[..., 1],
        ],
        axis=-1,
    )  # (P, N, 4)
    wts = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=-1)
    flat = planes.data.reshape(P * R * R, C)
    corners = flat[idx]  # (P, N, 4, C)
    out = np.einsum("pnk,pnkc->pnc", wts, corners)

    def _bw(g):
        if planes.requires_grad:
            contrib = (wts[..., None] * g[:, :, None, :]).reshape(-1, C)
            dflat = np.zeros((P * R * R, C), dtype=planes.dtype)
            np.add.at(dflat, idx.reshape(-1), contrib)
            planes._accum(dflat.reshape(planes.shape))
        if uv.requires_grad:
            c00, c01, c10, c11 = (corners[:, :, m, :] for m in range(4))
            du = ((1 - fv)[..., None] * (c10 - c00) + fv[..., None] * (c11 - c01)) * g
            dv = ((1 - fu)[..., None] * (c01 - c00) + fu[..., None] * (c11 - c10)) * g
            duv = np.stack([du.sum(-1), dv.sum(-1)], axis=-1) * scale * inside
            uv._accum(duv.astype(uv.dtype))

    return Tensor._make(out, (planes, uv), _bw)


# -- optimizers -------------------------------------------------------------------
class _Optimizer:
    def __init__(self, params: Iterable[Parameter], lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _active(self) -> list[Parameter]:
        active = [p for p in self.params if p.trainable and p.grad is not None]
        if not active and any(p.trainable for p in self.params):
            warnings.warn("optimizer step with no populated gradients; nothing updated", RuntimeWarning, stacklevel=3)
        return active


class SGD(_Optimizer):
    def step(self) -> None:
        for p in self._active():
            p.data -= self.lr * p.grad


class Adam(_Optimizer):
    """Adam with bias correction and per-parameter step counts.

    A parameter's moments and step count only advance on steps where it
    actually received a gradient.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: dict[int, dict] = {}

    def add_params(self, params: Iterable[Parameter]) -> None:
        known = {id(p) for p in self.params}
        self.params.extend(p for p in params if id(p) not in known)

    def step(self) -> None:
        b1, b2 = self.beta1, self.beta2
        for p in self._active():
            st = self.state.get(id(p))
            if st is None:
                st = self.state[id(p)] = {"t": 0, "m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            st["t"] += 1
            t = st["t"]
            g = p.grad
            m, v = st["m"], st["v"]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step = self.lr / (1 - b1**t)
            denom = np.sqrt(v / (1 - b2**t))
            denom += self.eps
            p.data -= (step * m / denom).astype(p.dtype, copy=False)


# -- gradient checking ----------------------------------------------------------
class GradCheckNaNError(FloatingPointError):
    """Raised when the checked function itself evaluates to NaN."""


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central differences.

    Runs in float64. Returns ``max |a - n| / max(|a|, |n|, 1e-8)`` over the
    probed coordinates (all of them, or ``max_coords`` sampled ones).
    """
    x0 = np.array(_as_array(x), dtype=np.float64)
    with precision(np.float64):
        xt = Tensor(x0.copy(), requires_grad=True)
        y = f(xt)
        if not np.all(np.isfinite(y.data)):
            raise GradCheckNaNError("function value is not finite at x")
        backward(y)
        analytic = np.zeros_like(x0) if xt.grad is None else xt.grad
        flat = x0.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.random.default_rng(seed).choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        with no_grad():
            for c in coords:
                xp = flat.copy()
                xp[c] += eps
                xm = flat.copy()
                xm[c] -= eps
                fp = f(Tensor(xp.reshape(x0.shape))).item()
                fm = f(Tensor(xm.reshape(x0.shape))).item()
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise GradCheckNaNError(f"function value is not finite near coordinate {c}")
                num = (fp - fm) / (2 * eps)
                a = analytic.reshape(-1)[c]
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, err)
    return float(worst)
