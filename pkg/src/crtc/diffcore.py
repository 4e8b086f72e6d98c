"""Reverse-mode autodiff over float64 numpy arrays.

Everything the model needs is a handful of dense operations at desk scale,
so the engine is deliberately small: a ``Tensor`` node class, a fixed set of
primitives with hand-written backward rules, a named parameter store with
Adam state, and a central-finite-difference gradient checker. All math is
double precision so the finite-difference checks have headroom.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced a NaN or infinity."""


class GradientCheckError(AssertionError):
    """Analytic and finite-difference gradients disagree."""


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """One node of the computation graph: a float64 array plus backprop hooks.

    Graphs are built dynamically by calling the module-level ops (or the
    operator overloads). ``backward()`` on a scalar output fills ``grad`` on
    every node with ``requires_grad=True`` that the output depends on.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root."""
        if self.data.shape != ():
            raise ValueError(f"backward() needs a scalar root, got shape {self.data.shape}")
        # iterative post-order: children appear before their consumers
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # convenience arithmetic; all routed through the module-level primitives
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward, what: str) -> Tensor:
    _check_finite(data, what)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, (a, b), bwd, "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bwd, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.T)

    return _node(a.data.T, (a,), bwd, "transpose")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0

    def bwd(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), bwd, "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - t * t))

    return _node(t, (a,), bwd, "tanh")


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd, "log")


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= lo

    def bwd(g):
        _accum(a, g * mask)

    return _node(np.maximum(a.data, lo), (a,), bwd, "clamp_min")


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, numerically stabilised."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _node(s, (a,), bwd, "softmax_rows")


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, np.ones(a.data.shape) * g)

    return _node(a.data.sum(), (a,), bwd, "sum_all")


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum_axis")


def gather_rows(a, idx) -> Tensor:
    """Row subset ``a[idx]``; repeated indices scatter-add on backward."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        if a.requires_grad:
            z = np.zeros_like(a.data)
            np.add.at(z, idx, g)
            _accum(a, z)

    return _node(a.data[idx], (a,), bwd, "gather_rows")


def place_rows(base: np.ndarray, idx, rows) -> Tensor:
    """Copy of ``base`` with ``rows`` written at positions ``idx``.

    Only the written rows participate in gradients; the base is a constant.
    """
    rows = as_tensor(rows)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.array(base, dtype=np.float64, copy=True)
    out[idx] = rows.data

    def bwd(g):
        _accum(rows, g[idx])

    return _node(out, (rows,), bwd, "place_rows")


def stack_cols(parts: Sequence) -> Tensor:
    """Stack 1-D tensors of length N into an N x len(parts) matrix."""
    ts = [as_tensor(p) for p in parts]
    data = np.stack([t.data for t in ts], axis=1)

    def bwd(g):
        for j, t in enumerate(ts):
            _accum(t, g[:, j])

    return _node(data, tuple(ts), bwd, "stack_cols")


def take_col(a, j: int) -> Tensor:
    """Column ``j`` as an N x 1 matrix."""
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            z = np.zeros_like(a.data)
            z[:, j : j + 1] = g
            _accum(a, z)

    return _node(a.data[:, j : j + 1], (a,), bwd, "take_col")


def sum_sq(a) -> Tensor:
    """Sum of squared entries, the workhorse reconstruction reduction."""
    a = as_tensor(a)
    return sum_all(mul(a, a))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda t: t,
    "relu": relu,
    "tanh": tanh,
}


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named float64 parameter arrays with per-parameter Adam state."""

    def __init__(self) -> None:
        self._params: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64, copy=True)
        _check_finite(arr, f"parameter {name!r}")
        self._params[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        self._t[name] = 0

    def names(self) -> list[str]:
        return list(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def step_count(self, name: str) -> int:
        return self._t[name]

    def tensors(self, trainable: bool, names: Iterable[str] | None = None) -> dict[str, Tensor]:
        """Fresh graph leaves (or constants) wrapping the current values."""
        out = {}
        for name in names if names is not None else self._params:
            out[name] = Tensor(self._params[name], requires_grad=trainable)
        return out

    def save(self, path) -> None:
        """Checkpoint all parameters to one .npz file; bit-exact round trip."""
        np.savez(path, **self._params)

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with np.load(path) as archive:
            for name in archive.files:
                store.add(name, archive[name])
        return store


def gradients(loss: Tensor, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss w.r.t. named leaves."""
    if loss.data.shape != ():
        raise ValueError("loss must be scalar")
    loss.backward()
    out = {}
    for name, leaf in leaves.items():
        out[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return out


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Standard Adam with bias correction; updates only the named parameters."""
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        _check_finite(g, f"gradient of {name!r}")
        p = store._params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name] = beta1 * store._m[name] + (1.0 - beta1) * g
        v = store._v[name] = beta2 * store._v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        store._params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference(
    loss_fn: Callable[[], float],
    arrays: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. each array element.

    The arrays are perturbed in place and restored, so ``loss_fn`` must read
    them afresh on every call.
    """
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        out[name] = grad
    return out


def check_gradients(
    build_loss: Callable[[dict[str, Tensor]], Tensor],
    store: ParamStore,
    names: Iterable[str] | None = None,
    h: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-6,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` receives a name->Tensor mapping for the checked parameters
    and must return the scalar loss; anything else it needs it captures as
    constants. Raises GradientCheckError when any element differs by more
    than ``max(rel_tol * scale, abs_floor)``. Returns the worst error ratio.
    """
    checked = list(names) if names is not None else store.names()
    leaves = store.tensors(trainable=True, names=checked)
    analytic = gradients(build_loss(leaves), leaves)

    def f() -> float:
        return build_loss(store.tensors(trainable=False, names=checked)).item()

    numeric = finite_difference(f, {n: store._params[n] for n in checked}, h=h)

    worst = 0.0
    for name in checked:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n)
        allowed = np.maximum(rel_tol * np.maximum(np.abs(a), np.abs(n)), abs_floor)
        ratio = err / allowed
        peak = float(ratio.max()) if ratio.size else 0.0
        if peak > 1.0:
            idx = np.unravel_index(np.argmax(ratio), ratio.shape)
            raise GradientCheckError(
                f"gradient mismatch for {name!r} at {idx}: "
                f"analytic={a[idx]:.10g} numeric={n[idx]:.10g}"
            )
        worst = max(worst, peak)
    return worst
