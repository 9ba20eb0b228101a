"""Dense NCHW tensors with reverse-mode autodiff, plus Adam and a gradient checker.

Every differentiable op returns a new :class:`Tensor` that remembers its
inputs and a backward rule. :func:`backward` orders the graph into a
:class:`Tape` (inputs before consumers) and replays it in reverse.

Convolution is cross-correlation (no kernel flip). There is no broadcasting:
binary ops demand identical shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor", "Tape", "AdamState",
    "conv2d", "pixel_shuffle", "pixel_unshuffle",
    "add", "sub", "mul", "scale", "relu", "abs_", "sum_", "mean",
    "diff_x", "diff_y", "separable_resample", "elementwise", "reduce",
    "backward", "build_tape", "grad_check", "adam_step",
    "kaiming_normal",
]


class Tensor:
    """A numeric array that can take part in reverse-mode differentiation.

    ``data`` is kept contiguous. Python sequences become float64 (the
    gradient-checking precision); float32 arrays stay float32 (training).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    # arithmetic sugar; all of these are the functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    out.op = op
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        axes = [i for i, (m, n) in enumerate(zip(a.shape, b.shape)) if m != n]
        if len(a.shape) != len(b.shape):
            detail = f"rank {len(a.shape)} vs {len(b.shape)}"
        else:
            detail = "axes " + ", ".join(str(i) for i in axes)
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape} ({detail})")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,),
                 lambda g: (np.where(pos, g, 0).astype(g.dtype),), "relu")


def abs_(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    sgn = np.sign(a.data)  # sign(0) == 0 gives the zero subgradient
    return _make(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def sum_(a: Tensor) -> Tensor:
    """Sum of all elements as a 1x1x1x1 tensor."""
    a = _as_tensor(a)
    shape = a.shape
    total = a.data.sum(dtype=a.dtype)
    return _make(np.full((1, 1, 1, 1), total, dtype=a.dtype), (a,),
                 lambda g: (np.full(shape, g.reshape(()), dtype=g.dtype),), "sum")


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return scale(sum_(a), 1.0 / a.data.size)


def elementwise(kind: str, *operands, c: float | None = None) -> Tensor:
    """Dispatch by name: add, sub, mul, scale (needs ``c``), relu, abs."""
    if kind == "scale":
        if c is None:
            raise ContractError("scale needs a constant c")
        return scale(operands[0], c)
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "abs": abs_}
    try:
        fn = table[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands)


def reduce(kind: str, a: Tensor) -> Tensor:
    if kind == "sum":
        return sum_(a)
    if kind == "mean":
        return mean(a)
    raise ContractError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------- differences

def _fdiff(arr: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    hi = [slice(None)] * arr.ndim
    lo = [slice(None)] * arr.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    out[tuple(lo)] = arr[tuple(hi)] - arr[tuple(lo)]
    return out


def _fdiff_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    # transpose of out[j] = a[j+1] - a[j] (j < n-1), out[n-1] = 0
    out = np.zeros_like(g)
    n = g.shape[axis]
    hi = [slice(None)] * g.ndim
    lo = [slice(None)] * g.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    out[tuple(hi)] += g[tuple(lo)]
    out[tuple(lo)] -= g[tuple(lo)]
    return out


def diff_x(a: Tensor) -> Tensor:
    """Horizontal forward difference; the last column is zero."""
    a = _as_tensor(a)
    return _make(_fdiff(a.data, -1), (a,), lambda g: (_fdiff_adjoint(g, -1),), "diff_x")


def diff_y(a: Tensor) -> Tensor:
    """Vertical forward difference; the last row is zero."""
    a = _as_tensor(a)
    return _make(_fdiff(a.data, -2), (a,), lambda g: (_fdiff_adjoint(g, -2),), "diff_y")


def separable_resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Fixed linear resize: out[n, c] = rows @ x[n, c] @ cols.T."""
    if x.data.ndim != 4 or rows.shape[1] != x.shape[2] or cols.shape[1] != x.shape[3]:
        raise DimensionError(f"separable_resample: matrices {rows.shape}, {cols.shape} do not fit input {x.shape}")
    rows = rows.astype(x.dtype)
    cols = cols.astype(x.dtype)
    out = np.ascontiguousarray(rows @ x.data @ cols.T)
    return _make(out, (x,), lambda g: (np.ascontiguousarray(rows.T @ g @ cols),), "resample")


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an (Cout, Cin, kH, kW) kernel."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise DimensionError(f"conv2d: input channels (axis 1) {c} != weight in-channels (axis 1) {cin}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},) (axis 0)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel dims must be odd, got kH={kh}, kW={kw}")
    if stride < 1 or pad < 0:
        raise ContractError("conv2d: stride must be >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw} (axes 2, 3)")
    # floor division: trailing rows/cols a strided kernel cannot reach are skipped
    oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xd = x.data
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (C, kh, kw, N, oh, ow) -> rows of the column matrix
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(cin * kh * kw, n * oh * ow)
    wmat = weight.data.reshape(cout, -1)
    out = (wmat @ cols).reshape(cout, n, oh, ow).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out) + bias.data.reshape(1, cout, 1, 1)

    def rule(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(cin, kh, kw, n, oh, ow)
            gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    return _make(out, (x, weight, bias), rule, "conv2d")


def _shuffle(arr: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = arr.shape
    co = c // (r * r)
    return arr.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)


def _unshuffle(arr: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = arr.shape
    return arr.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]."""
    if r < 1:
        raise ContractError("pixel_shuffle: r must be positive")
    if x.data.ndim != 4:
        raise DimensionError(f"pixel_shuffle: expected 4-D input, got {x.shape}")
    if x.shape[1] % (r * r):
        raise DimensionError(f"pixel_shuffle: channel count (axis 1) {x.shape[1]} not divisible by r^2={r * r}")
    out = np.ascontiguousarray(_shuffle(x.data, r))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(_unshuffle(g, r)),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse index map of :func:`pixel_shuffle`."""
    if x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"pixel_unshuffle: spatial dims {x.shape[2:]} not divisible by {r}")
    out = np.ascontiguousarray(_unshuffle(x.data, r))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(_shuffle(g, r)),), "pixel_unshuffle")


# ---------------------------------------------------------------- tape

@dataclass
class Tape:
    """Operations reachable from a root, ordered so inputs precede consumers."""

    nodes: list[Tensor] = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return Tape(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every upstream ``t`` with requires_grad."""
    if loss.data.size != 1 or loss.data.ndim != 4:
        raise ContractError(f"backward: loss must be a 1x1x1x1 scalar tensor, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``x``.

    ``x.data`` is perturbed in place, so ``f`` may also reach ``x`` through a
    closure (e.g. a model parameter).
    """
    if x.dtype != np.float64:
        raise ContractError("grad_check needs a float64 tensor")
    x.requires_grad = True
    x.grad = None
    backward(f(x))
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    g_fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data.reshape(()))
        flat[i] = orig - h
        fm = float(f(x).data.reshape(()))
        flat[i] = orig
        g_fd[i] = (fp - fm) / (2 * h)
    g_ad = g_ad.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom))


# ---------------------------------------------------------------- optimisation

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. ``None`` grads count as zero."""
    if len(params) != len(grads):
        raise DimensionError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if state.lr < 0:
        raise ContractError("adam_step: learning rate must be non-negative")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("adam_step: optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.data -= step.astype(p.dtype, copy=False)


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    """Fan-in scaled normal, std = sqrt(2 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
