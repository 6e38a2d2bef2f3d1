"""A small reverse-mode automatic differentiation tape over numpy arrays.

Each :class:`Tensor` produced by an operation remembers its parents and a
closure that pushes its gradient to them. ``loss.backward()`` visits the graph
in reverse topological order; gradients accumulate in ``Tensor.grad``.
"""

import numpy as np

from ..errors import InvalidArgumentError, StateError
from . import kernels


class Tensor:
    """A float64 array node in the computation graph.

    Parameters
    ----------
    data : array_like
    requires_grad : bool
        Leaves with ``requires_grad`` receive a ``grad`` buffer on backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Back-propagate from this node.

        Raises
        ------
        StateError
            If this tensor was not produced by a recorded forward pass, or
            its graph has already been consumed by an earlier backward call.
        """
        if self._backward is None:
            raise StateError("backward() called on a tensor with no recorded forward pass")
        if self._consumed:
            raise StateError("backward() called twice on the same graph")
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True


def _topological(root):
    order, seen = [], set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def parameter(data):
    return Tensor(data, requires_grad=True)


def conv2d(x, w, b, stride, pad):
    y = kernels.conv2d(x.data, w.data, b.data, stride, pad)
    kh, kw = w.shape[2], w.shape[3]
    in_hw = x.shape[2:]

    def back(g):
        gx = kernels.conv2d_adjoint(g, w.data, stride, pad, in_hw) if x.requires_grad else None
        gw = kernels.conv2d_weight_grad(x.data, g, kh, kw, stride, pad)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor(y, _parents=(x, w, b), _backward=back)


def conv_transpose2d(x, w, b, stride, pad, out_hw):
    y = kernels.conv_transpose2d(x.data, w.data, b.data, stride, pad, out_hw)
    kh, kw = w.shape[2], w.shape[3]

    def back(g):
        # the forward map is the adjoint of conv2d(., w), so its adjoint is conv2d
        gx = kernels.conv2d(g, w.data, None, stride, pad) if x.requires_grad else None
        gw = kernels.conv2d_weight_grad(g, x.data, kh, kw, stride, pad)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor(y, _parents=(x, w, b), _backward=back)


def dense(x, w, b):
    y = kernels.dense(x.data, w.data, b.data)

    def back(g):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return Tensor(y, _parents=(x, w, b), _backward=back)


def elu(x):
    y = kernels.elu(x.data)

    def back(g):
        return (g * kernels.elu_grad(x.data),)

    return Tensor(y, _parents=(x,), _backward=back)


def reshape(x, shape):
    old = x.shape

    def back(g):
        return (g.reshape(old),)

    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=back)


def mse(pred, target):
    """Mean of squared differences; ``target`` is a constant array."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target
    value = np.mean(diff * diff)

    def back(g):
        return (g * (2.0 / diff.size) * diff,)

    return Tensor(value, _parents=(pred,), _backward=back)
