"""Small tape-based reverse-mode differentiation over numpy arrays.

Input derivatives are propagated forward as *jets*: an array of shape
``(1 + k, N, ...)`` whose slice 0 holds the primal values and slices
``1..k`` the tangents along ``k`` seeded input directions.  Every jet
primitive is itself an ordinary tape node, so reverse accumulation through
a loss built from tangents yields exact parameter gradients
(reverse-over-forward).

All reductions run in a fixed order; identical inputs give bit-identical
results.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- graph helpers -------------------------------------------------
    @staticmethod
    def _wrap(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accumulate(self, g):
        # out-of-place: incoming arrays may be shared or read-only broadcasts
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Reverse sweep from a scalar node; fills ``.grad`` of every ancestor."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _make(self, data, parents, op, backward):
        rg = any(p.requires_grad for p in parents)
        out = Tensor(data, rg, parents if rg else (), op)
        if rg:
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = self._wrap(other)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return self._make(self.data + other.data, (self, other), "add", bw)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), "neg", lambda g: self._accumulate(-g))

    def __sub__(self, other):
        other = self._wrap(other)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return self._make(self.data - other.data, (self, other), "sub", bw)

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __mul__(self, other):
        other = self._wrap(other)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(self.data * other.data, (self, other), "mul", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out_data = self.data / other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * out_data / other.data, other.shape))

        return self._make(out_data, (self, other), "div", bw)

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("only constant exponents are supported")
        data = self.data**k
        return self._make(
            data, (self,), f"pow{k}",
            lambda g: self._accumulate(g * k * self.data ** (k - 1)),
        )

    def __matmul__(self, other):
        other = self._wrap(other)
        if other.data.ndim != 2:
            raise ValueError("right operand of @ must be a matrix")

        def bw(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                a = self.data.reshape(-1, self.data.shape[-1])
                other._accumulate(a.T @ g.reshape(-1, g.shape[-1]))

        return self._make(self.data @ other.data, (self, other), "matmul", bw)

    def __getitem__(self, idx):
        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g) if _needs_add_at(idx) else full.__setitem__(idx, g)
            self._accumulate(full)

        return self._make(self.data[idx], (self,), "getitem", bw)

    # -- elementwise functions -----------------------------------------
    def sin(self):
        return self._make(np.sin(self.data), (self,), "sin", lambda g: self._accumulate(g * np.cos(self.data)))

    def cos(self):
        return self._make(np.cos(self.data), (self,), "cos", lambda g: self._accumulate(-g * np.sin(self.data)))

    def exp(self):
        data = np.exp(self.data)
        return self._make(data, (self,), "exp", lambda g: self._accumulate(g * data))

    def square(self):
        return self._make(self.data * self.data, (self,), "square", lambda g: self._accumulate(2.0 * g * self.data))

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None):
        def bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape))
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.shape))

        return self._make(self.data.sum(axis=axis), (self,), "sum", bw)

    def mean(self):
        n = self.data.size
        return self._make(
            self.data.mean(), (self,), "mean",
            lambda g: self._accumulate(np.broadcast_to(g / n, self.shape)),
        )

    def reshape(self, *shape):
        return self._make(
            self.data.reshape(*shape), (self,), "reshape",
            lambda g: self._accumulate(g.reshape(self.shape)),
        )


def _needs_add_at(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0):
    tensors = [Tensor._wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return tensors[0]._make(data, tuple(tensors), "concat", bw)


def stack(tensors, axis=0):
    tensors = [Tensor._wrap(t) for t in tensors]
    return concat([t.reshape(*t.shape[:axis], 1, *t.shape[axis:]) for t in tensors], axis=axis)


# -- snake activation ---------------------------------------------------

def snake(a: Tensor) -> Tensor:
    """a + sin(a)^2 on a plain tensor."""
    a = Tensor._wrap(a)
    s = np.sin(a.data)
    return a._make(a.data + s * s, (a,), "snake", lambda g: a._accumulate(g * (1.0 + np.sin(2.0 * a.data))))


def snake_prime(a: Tensor) -> Tensor:
    """1 + sin(2a), the derivative of the snake activation, as a differentiable node."""
    a = Tensor._wrap(a)
    return a._make(
        1.0 + np.sin(2.0 * a.data), (a,), "snake_prime",
        lambda g: a._accumulate(g * 2.0 * np.cos(2.0 * a.data)),
    )


def snake_jet(h: Tensor) -> Tensor:
    """Snake applied to a jet ``(1+k, N, W)``: primal a + sin^2 a, tangents (1 + sin 2a) * da.

    Fused version of ``snake(h[0])`` and ``snake_prime(h[0]) * h[1:]``; one
    sin and one cos evaluation per primal entry.
    """
    a = h.data[0]
    s = np.sin(a)
    c = np.cos(a)
    d1 = 1.0 + 2.0 * s * c  # f'(a)
    out = np.empty_like(h.data)
    out[0] = a + s * s
    np.multiply(h.data[1:], d1, out=out[1:])

    def bw(g):
        grad = np.empty_like(h.data)
        grad[0] = g[0] * d1
        if h.data.shape[0] > 1:
            d2 = 2.0 * (c * c - s * s)  # f''(a)
            grad[0] += d2 * np.einsum("k...,k...->...", g[1:], h.data[1:])
            np.multiply(g[1:], d1, out=grad[1:])
        h._accumulate(grad)

    return h._make(out, (h,), "snake_jet", bw)


def seed_inputs(z, directions) -> Tensor:
    """Jet for inputs ``z`` (N, d) with unit tangents along the given input columns."""
    z = np.asarray(z, dtype=np.float64)
    jet = np.zeros((1 + len(directions),) + z.shape)
    jet[0] = z
    for i, col in enumerate(directions):
        jet[1 + i, :, col] = 1.0
    return Tensor(jet)


def check_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {where}")
    return t


# -- parameter storage ----------------------------------------------------

class ParameterVector:
    """Flat float64 storage for every trainable, addressed by name.

    ``layout`` maps names to ``(offset, shape)``; the extents partition the
    flat array exactly.
    """

    def __init__(self, shapes):
        self.layout = OrderedDict()
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(shape)
            size = int(np.prod(shape)) if shape else 1
            self.layout[name] = (offset, shape)
            offset += size
        self.values = np.zeros(offset)

    def __len__(self):
        return self.values.size

    def extent(self, name) -> slice:
        offset, shape = self.layout[name]
        size = int(np.prod(shape)) if shape else 1
        return slice(offset, offset + size)

    def view(self, name) -> np.ndarray:
        _, shape = self.layout[name]
        return self.values[self.extent(name)].reshape(shape)

    def leaves(self) -> dict:
        """Fresh graph leaves over the current values."""
        return {name: Tensor(self.view(name), requires_grad=True) for name in self.layout}

    def gather(self, leaves) -> np.ndarray:
        grad = np.zeros_like(self.values)
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                grad[self.extent(name)] = np.ravel(leaf.grad)
        return grad

    def copy(self) -> "ParameterVector":
        new = ParameterVector({k: s for k, (_, s) in self.layout.items()})
        new.values[:] = self.values
        return new


def grad_loss(loss_fn, params: ParameterVector):
    """Evaluate ``loss_fn(leaves)`` (a scalar Tensor) and its gradient over ``params``.

    Returns ``(loss_value, flat_gradient, loss_tensor)``.
    """
    leaves = params.leaves()
    loss = loss_fn(leaves)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is not finite ({value})")
    loss.backward()
    grad = params.gather(leaves)
    bad = ~np.isfinite(grad)
    if np.any(bad):
        names = [n for n in params.layout if np.any(bad[params.extent(n)])]
        raise NonFiniteError(f"non-finite gradient in {names}")
    return value, grad, loss


def finite_difference_check(loss_fn, params: ParameterVector, step: float = 1e-6,
                            samples: int = 20, seed: int = 0, indices=None) -> dict:
    """Compare the reverse-mode gradient with central differences on sampled coordinates.

    The relative error of coordinate ``i`` is
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)`` where ``floor`` is 1e-8 times
    the largest gradient magnitude seen, so that coordinates with a vanishing
    gradient do not dominate.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    _, grad, _ = grad_loss(loss_fn, params)
    rng = np.random.default_rng(seed)
    if indices is None:
        indices = rng.choice(len(params), size=min(samples, len(params)), replace=False)
    indices = np.sort(np.asarray(indices))
    base = params.values.copy()
    fd = np.empty(indices.size)
    for n, i in enumerate(indices):
        params.values[i] = base[i] + step
        up = loss_fn(params.leaves()).item()
        params.values[i] = base[i] - step
        down = loss_fn(params.leaves()).item()
        params.values[i] = base[i]
        fd[n] = (up - down) / (2.0 * step)
    ad = grad[indices]
    floor = 1e-8 * max(np.max(np.abs(ad)), np.max(np.abs(fd)), 1e-300)
    rel = np.abs(ad - fd) / np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
    return {
        "indices": indices.tolist(),
        "autodiff": ad.tolist(),
        "finite_difference": fd.tolist(),
        "relative_error": rel.tolist(),
        "max_relative_error": float(rel.max()),
        "step": step,
    }
