"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When any operand requires a
gradient (and recording is enabled) the result remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.
:meth:`Tensor.backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every reachable node.

        ``self`` must hold a single value. Gradients add onto whatever is
        already stored, so call ``zero_grad`` between independent passes.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes if axes else None)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _result(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# -- unary nonlinearities -----------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    return _result(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _result(a.data * on, (a,), lambda g: (g * on,))


def inverse_sigmoid(a, eps: float = 1e-6) -> Tensor:
    """logit(x) with x clamped into [eps, 1 - eps]."""
    x = clip(a, eps, 1.0 - eps)
    return log(x) - log(1.0 - x)


# -- reductions and shape ops --------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def index(a, key) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _result(a.data[key], (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    n = len(tensors)
    return _result(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes are a batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """2-D convolution on an H x W x C map with replicate ("edge") padding.

    ``weight`` is k x k x C_in x C_out with odd k; padding is k // 2 on each
    side so a constant input yields a constant output.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    k, _, cin, cout = weight.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    h, w, _ = x.shape
    p = k // 2
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)), mode="edge")
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = windows.shape[:2]
    # windows: ho, wo, cin, k, k -> rows ordered (ki, kj, cin) to match weight
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * cin)
    wmat = weight.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(ho, wo, cout)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gflat = g.reshape(ho * wo, cout)
        gw = (cols.T @ gflat).reshape(weight.shape)
        dcols = (gflat @ wmat.T).reshape(ho, wo, k, k, cin)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
        rows = dxp[p : p + h].copy()
        if p:
            rows[0] += dxp[:p].sum(axis=0)
            rows[-1] += dxp[p + h :].sum(axis=0)
        gx = rows[:, p : p + w].copy()
        if p:
            gx[:, 0] += rows[:, :p].sum(axis=1)
            gx[:, -1] += rows[:, p + w :].sum(axis=1)
        if bias is None:
            return gx, gw
        return gx, gw, gflat.sum(axis=0)

    return _result(out, parents, backward)


# -- parameter containers -------------------------------------------------


class Module:
    """Base for anything owning parameters.

    Parameters and sub-modules are discovered from instance attributes
    (including lists of modules), giving dotted names such as
    ``encoder.layers.0.attn.w_q``.
    """

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        found: list[tuple[str, Parameter]] = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                found.append((name, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        found.append((f"{name}.{i}", item))
        return found

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (d_in, d_out), d_in))
        self.bias = Parameter(uniform_init(rng, (d_out,), d_in)) if bias else None

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 1:
            return self(x.reshape(1, -1)).reshape(-1)
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Stack of linear layers with ReLU between them (not after the last)."""

    def __init__(self, rng: np.random.Generator, dims: Sequence[int]):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        fan_in = k * k * c_in
        self.weight = Parameter(uniform_init(rng, (k, k, c_in, c_out), fan_in))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in))
        self.stride = stride

    def __call__(self, x) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)


def multi_head_attention(q, k, v, heads: int, w_q=None, w_k=None, w_v=None, w_o=None) -> Tensor:
    """Scaled dot-product attention split across ``heads``.

    ``q`` is n x D, ``k`` and ``v`` are m x D. Each projection is optional;
    a missing one acts as the identity.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    dim = q.shape[-1]
    if dim % heads:
        raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
    if w_q is not None:
        q = matmul(q, w_q)
    if w_k is not None:
        k = matmul(k, w_k)
    if w_v is not None:
        v = matmul(v, w_v)
    n, m, dh = q.shape[0], k.shape[0], dim // heads
    if heads == 1:
        attn = softmax(matmul(q, k.T) * (1.0 / np.sqrt(dh)), axis=-1)
        out = matmul(attn, v)
    else:
        qh = transpose(reshape(q, (n, heads, dh)), (1, 0, 2))
        kh = transpose(reshape(k, (m, heads, dh)), (1, 2, 0))
        vh = transpose(reshape(v, (m, heads, dh)), (1, 0, 2))
        attn = softmax(matmul(qh, kh) * (1.0 / np.sqrt(dh)), axis=-1)
        out = reshape(transpose(matmul(attn, vh), (1, 0, 2)), (n, dim))
    return matmul(out, w_o) if w_o is not None else out


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.heads = heads
        self.w_q = Parameter(uniform_init(rng, (d, d), d))
        self.w_k = Parameter(uniform_init(rng, (d, d), d))
        self.w_v = Parameter(uniform_init(rng, (d, d), d))
        self.w_o = Parameter(uniform_init(rng, (d, d), d))

    def __call__(self, q, k, v) -> Tensor:
        return multi_head_attention(q, k, v, self.heads, self.w_q, self.w_k, self.w_v, self.w_o)


# -- optimisation -------------------------------------------------------------


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: dict,
    lr: float | Sequence[float],
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``state`` holds ``step`` plus per-parameter ``m``/``v`` lists and is
    created on first use. ``lr`` may be a scalar or one rate per parameter.
    """
    b1, b2 = betas
    if "m" not in state:
        state["step"] = 0
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    rates = [lr] * len(params) if np.isscalar(lr) else list(lr)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ContractError(f"parameter {p.name or i} has no gradient")
        rate = rates[i]
        p.data *= 1.0 - rate * weight_decay
        m = state["m"][i]
        v = state["v"][i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= rate * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(
        self,
        named_params: Iterable[tuple[str, Parameter]],
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        lr_scale: Callable[[str], float] | None = None,
    ):
        self.names, self.params = [], []
        for name, p in named_params:
            self.names.append(name)
            self.params.append(p)
        self.lr = lr
        self.weight_decay = weight_decay
        self.scales = [lr_scale(n) if lr_scale else 1.0 for n in self.names]
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adamw_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            [self.lr * s for s in self.scales],
            self.weight_decay,
        )


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total
