"""A small reverse-mode automatic differentiation engine.

Values are numpy arrays (or 0-d arrays for scalars).  Every operation on a
:class:`Tensor` records its inputs and a closure that pushes the output
adjoint back to them; :meth:`Tensor.backward` replays the record in reverse
topological order.  Forward-mode time derivatives are not a separate
mechanism: they are built out of the same primitives (see ``nn``), so the
reverse pass differentiates through them automatically.

Only the primitives defined here are supported.  Mixing a Tensor into a
numpy ufunc or ``math`` call raises ``TypeError`` instead of silently
dropping the derivative.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "UnsupportedOperation", "as_tensor", "tanh", "softplus", "square",
           "tensor_sum", "mean", "grad", "value_of"]


class UnsupportedOperation(TypeError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_back", "requires_grad", "name")
    # keeps numpy from treating Tensor as an array-like inside ufuncs
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _back=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = _parents
        self._back = _back
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor({self.data!r}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    def __float__(self):
        raise UnsupportedOperation("converting a Tensor to float would detach it from the "
                                   "graph; use value_of() explicitly")

    def __bool__(self):
        raise UnsupportedOperation("truth value of a Tensor is ambiguous")

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        o = as_tensor(other)
        a, b = self, o

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return Tensor(a.data + b.data, _parents=(a, b), _back=back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _back=lambda g: (-g,))

    def __sub__(self, other):
        o = as_tensor(other)
        a, b = self, o

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
        return Tensor(a.data - b.data, _parents=(a, b), _back=back)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = _constant(other)
            a = self
            return Tensor(a.data * c, _parents=(a,),
                          _back=lambda g: (_unbroadcast(g * c, a.shape),))
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
        return Tensor(a.data * b.data, _parents=(a, b), _back=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            return self * (1.0 / _constant(other))
        a, b = self, other
        out = a.data / b.data

        def back(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * out / b.data, b.shape))
        return Tensor(out, _parents=(a, b), _back=back)

    def __rtruediv__(self, other):
        c = _constant(other)
        a = self
        out = c / a.data
        return Tensor(out, _parents=(a,),
                      _back=lambda g: (_unbroadcast(-g * out / a.data, a.shape),))

    def __pow__(self, k):
        if isinstance(k, Tensor):
            raise UnsupportedOperation("only constant exponents are supported")
        k = float(k)
        a = self
        if k == 2.0:
            return Tensor(a.data * a.data, _parents=(a,), _back=lambda g: (2.0 * g * a.data,))
        return Tensor(a.data ** k, _parents=(a,),
                      _back=lambda g: (k * g * a.data ** (k - 1.0),))

    def __rpow__(self, other):
        raise UnsupportedOperation("a Tensor exponent is not supported")

    def __matmul__(self, other):
        o = as_tensor(other)
        a, b = self, o
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise UnsupportedOperation("matmul is only defined for 2-d tensors")

        def back(g):
            return g @ b.data.T, a.data.T @ g
        return Tensor(a.data @ b.data, _parents=(a, b), _back=back)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            if _needs_add_at(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] = g
            return (full,)
        return Tensor(a.data[idx], _parents=(a,), _back=back)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)

    # reverse pass -------------------------------------------------------
    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(seed, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._back(g)):
                if not parent.requires_grad:
                    continue
                k = id(parent)
                grads[k] = pg if k not in grads else grads[k] + pg


def _needs_add_at(idx) -> bool:
    # fancy integer indexing may repeat entries; basic slicing never does
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _constant(x):
    if isinstance(x, (int, float, np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.astype(float, copy=False)
    raise UnsupportedOperation(f"cannot combine Tensor with {type(x).__name__}")


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_constant(x))


def value_of(x):
    return x.data if isinstance(x, Tensor) else x


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    y = np.tanh(x.data)
    return Tensor(y, _parents=(x,), _back=lambda g: (g * (1.0 - y * y),))


def _softplus(v):
    return np.logaddexp(0.0, v)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def softplus(x):
    """log(1 + e^x), evaluated without overflow."""
    if not isinstance(x, Tensor):
        return _softplus(np.asarray(x, dtype=float))
    s = _sigmoid(x.data)
    return Tensor(_softplus(x.data), _parents=(x,), _back=lambda g: (g * s,))


def square(x):
    return x * x if not isinstance(x, Tensor) else x ** 2


def tensor_sum(x):
    if not isinstance(x, Tensor):
        return np.sum(x)
    shape = x.shape
    return Tensor(x.data.sum(), _parents=(x,), _back=lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x):
    if not isinstance(x, Tensor):
        return np.mean(x)
    n = x.data.size
    shape = x.shape
    return Tensor(x.data.mean(), _parents=(x,),
                  _back=lambda g: (np.full(shape, float(g) / n),))


def grad(fn, *leaves: np.ndarray):
    """Value and gradients of a scalar function of arrays.

    ``fn`` receives one Tensor per array and must return a scalar Tensor.
    """
    ts = [Tensor(np.array(a, dtype=float), requires_grad=True) for a in leaves]
    out = fn(*ts)
    out.backward()
    return float(out.data), [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
