"""Reverse-mode automatic differentiation on dense numpy arrays.

Every value is a float64 ``Tensor``.  Operations build a computation graph of
closures; ``Tensor.backward()`` topologically sorts the graph and accumulates
gradients into ``.grad``.  Gradients sum across repeated backward calls until
``zero_grad`` is invoked, which lets a trainer own the reset point.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the reverse-mode differentiation graph.

    `data` is always a float64 ndarray.  Plain ndarrays and Python scalars mix
    freely with tensors in arithmetic and are treated as constants (no
    gradient flows to them).
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_grad_shared")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = ()
        self._grad_shared = False

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def _child(self, data, prev):
        out = Tensor(data)
        out.requires_grad = any(p.requires_grad for p in prev)
        out._prev = tuple(p for p in prev if p.requires_grad)
        return out

    def _accumulate(self, grad):
        """Add a gradient contribution.

        The incoming array is stored by reference (it may be a view of
        another node's buffer), so it is only copied lazily, on the first
        accumulation that would otherwise mutate shared memory.
        """
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = grad
            self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + grad
            self._grad_shared = False
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None
        self._grad_shared = False

    def backward(self):
        """Backpropagate from a scalar loss through the whole graph."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        out = self._child(self.data + other.data, (self, other))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad)
            if other.requires_grad:
                other._accumulate(out.grad)

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._child(-self.data, (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(-out.grad)

        out._backward = _backward
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = Tensor._lift(other)
        out = self._child(self.data * other.data, (self, other))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * other.data)
            if other.requires_grad:
                other._accumulate(out.grad * self.data)

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out = self._child(self.data / other.data, (self, other))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad / other.data)
            if other.requires_grad:
                other._accumulate(-out.grad * self.data / (other.data * other.data))

        out._backward = _backward
        return out

    def __pow__(self, exponent):
        assert isinstance(exponent, (int, float))
        out = self._child(self.data ** exponent, (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))

        out._backward = _backward
        return out

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeError(
                f"matmul inner dimensions differ: {self.data.shape} @ {other.data.shape}"
            )
        out = self._child(self.data @ other.data, (self, other))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad @ np.swapaxes(other.data, -1, -2))
            if other.requires_grad:
                other._accumulate(np.swapaxes(self.data, -1, -2) @ out.grad)

        out._backward = _backward
        return out

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self._child(self.data.reshape(shape), (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.data.shape))

        out._backward = _backward
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.data.ndim - 1, -1, -1))
        out = self._child(self.data.transpose(axes), (self,))
        inverse = tuple(np.argsort(axes))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.transpose(inverse))

        out._backward = _backward
        return out

    @staticmethod
    def _basic_index(index):
        parts = index if isinstance(index, tuple) else (index,)
        return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)

    def __getitem__(self, index):
        out = self._child(self.data[index], (self,))
        # Basic (slice/int) indexing selects each element at most once, so
        # the scatter can be an in-place add; fancy indexing may repeat
        # elements and needs the unbuffered np.add.at.
        basic = Tensor._basic_index(index)

        def _backward():
            if not self.requires_grad:
                return
            if self.grad is None:
                # np.zeros is calloc-backed; zeros_like would touch every page
                self.grad = np.zeros(self.data.shape)
            elif self._grad_shared:
                self.grad = self.grad.copy()
            self._grad_shared = False
            if basic:
                self.grad[index] += out.grad
            else:
                np.add.at(self.grad, index, out.grad)

        out._backward = _backward
        return out

    def sum(self, axis=None, keepdims=False):
        out = self._child(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def _backward():
            if self.requires_grad:
                grad = out.grad
                if axis is not None and not keepdims:
                    grad = np.expand_dims(grad, axis)
                self._accumulate(np.broadcast_to(grad, self.data.shape))

        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities ----------------------------------------------------

    def relu(self):
        mask = self.data > 0
        out = self._child(self.data * mask, (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * mask)

        out._backward = _backward
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = self._child(s, (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * s * (1.0 - s))

        out._backward = _backward
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = self._child(t, (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * (1.0 - t * t))

        out._backward = _backward
        return out

    def abs(self):
        sign = np.sign(self.data)
        out = self._child(np.abs(self.data), (self,))

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * sign)

        out._backward = _backward
        return out

    def softmax(self, bias=None):
        """Softmax over the last axis, stabilized by max subtraction.

        `bias` is an optional constant array added to the logits first;
        folding it in here avoids materializing a separate shifted copy.
        """
        if bias is None:
            e = self.data - self.data.max(axis=-1, keepdims=True)
        else:
            e = self.data + bias
            e -= e.max(axis=-1, keepdims=True)
        np.exp(e, out=e)
        e /= e.sum(axis=-1, keepdims=True)
        s = e
        out = self._child(s, (self,))

        def _backward():
            if self.requires_grad:
                inner = np.einsum("...i,...i->...", out.grad, s)[..., None]
                tmp = out.grad - inner
                tmp *= s
                self._accumulate(tmp)

        out._backward = _backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def concat(tensors, axis=0):
    """Concatenate tensors along `axis` (differentiable)."""
    tensors = [Tensor._lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in tensors)
    out._prev = tuple(t for t in tensors if t.requires_grad)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * data.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(idx)])

    out._backward = _backward
    return out


def where(condition, a, b):
    """Elementwise select: `a` where `condition` else `b`.

    `condition` is a plain boolean array; no gradient flows through it.
    """
    condition = np.asarray(condition, dtype=bool)
    a = Tensor._lift(a)
    b = Tensor._lift(b)
    out = Tensor(np.where(condition, a.data, b.data))
    out.requires_grad = a.requires_grad or b.requires_grad
    out._prev = tuple(t for t in (a, b) if t.requires_grad)

    def _backward():
        if a.requires_grad:
            a._accumulate(np.where(condition, out.grad, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(condition, 0.0, out.grad))

    out._backward = _backward
    return out


def matmul(a, b):
    return Tensor._lift(a) @ b


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Gradients flow to `x`, `gain`, and `bias`.
    """
    gain = Tensor._lift(gain)
    bias = Tensor._lift(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    prev = tuple(t for t in (x, gain, bias) if t.requires_grad)
    out.requires_grad = bool(prev)
    out._prev = prev

    def _backward():
        g = out.grad
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    out._backward = _backward
    return out


def dropout(x, p, rng, train):
    """Inverted dropout: keep-mask drawn from `rng`, scaled by 1/(1-p).

    Identity in eval mode.  The mask draw consumes `rng` state only when
    training with p > 0, keeping eval passes deterministic.
    """
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return x * keep


class Parameter(Tensor):
    """Learnable tensor with a unique name path and a weight-decay flag."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name="", decay=True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.decay = decay

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Module:
    """Container with named-parameter collection and train/eval mode.

    Attribute insertion order defines parameter order, so collection is
    deterministic for a fixed construction sequence.
    """

    def __init__(self):
        self.training = True

    def train(self):
        for m in self._submodules():
            m.train()
        self.training = True
        return self

    def eval(self):
        for m in self._submodules():
            m.eval()
        self.training = False
        return self

    def _submodules(self):
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def named_parameters(self, prefix=""):
        for key, value in self.__dict__.items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        yield item.name, item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def finite_difference_check(f, params, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f()` must be a deterministic scalar function of `params` (run models in
    eval mode or with dropout 0).  Relative error per element is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            ai = a.reshape(-1)[i]
            err = abs(ai - numeric) / max(abs(ai), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
