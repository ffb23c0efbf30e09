"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

Every value is float64. A :class:`Tensor` produced by an operation on
tensors that require gradients records its parents and a closure mapping the
upstream gradient to one gradient per parent; :func:`backward` walks the
recorded graph once in reverse topological order.
"""
import contextlib
import struct
import threading

import numpy as np

from . import kernels
from .errors import (
    DegenerateBatch,
    IndexOutOfRange,
    NonScalarLoss,
    ShapeMismatch,
)

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.value

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op):
    out = Tensor(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), back, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), back, "mul")


def scale(a, c):
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(x):
    y = 0.5 * (np.tanh(0.5 * x.value) + 1.0)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x):
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x):
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(as_tensor(x))


# ---------------------------------------------------------------- structural

def matmul(a, b):
    """Matrix product. ``a`` may carry leading batch axes when ``b`` is 2-D;
    two 3-D operands multiply batch-wise."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} x {b.shape}")
    if b.ndim == 2:
        k = a.shape[-1]

        def back(g):
            da = g @ b.value.T
            db = a.value.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return da, db

    else:
        if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
            raise ShapeMismatch(f"matmul: batch dims differ {a.shape} x {b.shape}")

        def back(g):
            return g @ np.swapaxes(b.value, -1, -2), np.swapaxes(a.value, -1, -2) @ g

    return _node(a.value @ b.value, (a, b), back, "matmul")


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x, shape):
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in parts)


def index(x, key):
    basic = _is_basic(key)

    def back(g):
        out = np.zeros_like(x.value)
        if basic:
            out[key] += g
        else:
            np.add.at(out, key, g)
        return (out,)

    try:
        value = x.value[key]
    except IndexError as exc:
        raise IndexOutOfRange(str(exc)) from None
    return _node(value, (x,), back, "index")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(value, tensors, back, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.stack([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {exc}") from None

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(value, tensors, back, "stack")


def tsum(x, axis=None):
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), back, "sum")


def mean(x, axis=None):
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis), 1.0 / n)


def softmax(x, axis=-1):
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (x,), back, "softmax")


# ---------------------------------------------------------------- network ops

def conv1d(x, w, bias=None, stride=1, padding="same"):
    """Cross-correlation over the time axis.

    ``x`` is (batch, T, C_in), ``w`` is (k, C_in, C_out). "same" padding
    gives ``ceil(T / stride)`` outputs, "valid" gives
    ``floor((T - k) / stride) + 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape} vs kernel {w.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    B, T, c_in = x.shape
    k, _, c_out = w.shape
    if padding == "same":
        t_out = -(-T // stride)
        pad = max((t_out - 1) * stride + k - T, 0)
        left = pad // 2
        right = pad - left
    elif padding == "valid":
        if k > T:
            raise ShapeMismatch(f"conv1d: kernel {k} longer than input {T}")
        t_out = (T - k) // stride + 1
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.value, ((0, 0), (left, right), (0, 0))) if (left or right) else x.value
    tp = xp.shape[1]
    cols = kernels.im2col(xp, k, stride, t_out)
    w2 = w.value.reshape(k * c_in, c_out)
    out = cols @ w2
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeMismatch(f"conv1d: bias {bias.shape} for {c_out} channels")
        out += bias.value
        parents.append(bias)

    def back(g):
        g2 = g.reshape(-1, c_out)
        dw = (cols.reshape(-1, k * c_in).T @ g2).reshape(w.shape)
        dcols = (g2 @ w2.T).reshape(B, t_out, k, c_in)
        dxp = kernels.col2im(dcols, tp, k, stride)
        dx = dxp[:, left : left + T]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _node(out, parents, back, "conv1d")


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization of a (batch, T, C) tensor.

    In training mode statistics come from the batch and time axes and the
    running arrays are updated in place; in eval mode the running arrays
    are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm1d: {C} channels vs gamma {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatch("batch normalization needs batch >= 2 in training mode")
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        m = x.value.size // C
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = xhat * gamma.value + beta.value

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * gamma.value
        if training:
            dx = inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))
        else:
            dx = gx * inv
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), back, "batchnorm1d")


def dropout(x, p, training, rng):
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.value * keep, (x,), lambda g: (g * keep,), "dropout")


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under softmax."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross entropy: logits {logits.shape}, targets {targets.shape}")
    n, c = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexOutOfRange(f"target index outside [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return _node(np.asarray(loss), (logits,), back, "cross_entropy")


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    n = diff.size

    def back(g):
        d = diff * (2.0 * g / n)
        return d, -d

    return _node(np.asarray(np.mean(diff * diff)), (pred, target), back, "mse")


def gru_sequence(x, s0, U, W, b):
    """Run one GRU layer over a whole (batch, T, d_in) sequence.

    ``U`` is (d_in, 3H), ``W`` is (H, 3H), ``b`` is (3H,), gate blocks
    ordered update, reset, candidate. ``s0`` may be ``None`` (zeros).
    Returns the (batch, T, H) sequence of states.
    """
    x, U, W, b = as_tensor(x), as_tensor(U), as_tensor(W), as_tensor(b)
    if x.ndim != 3 or U.shape[0] != x.shape[2]:
        raise ShapeMismatch(f"gru: input {x.shape} vs U {U.shape}")
    H = W.shape[0]
    if U.shape[1] != 3 * H or W.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ShapeMismatch("gru: inconsistent parameter shapes")
    B, T, d_in = x.shape
    parents = [x, U, W, b]
    if s0 is None:
        s0v = np.zeros((B, H))
    else:
        s0 = as_tensor(s0)
        if s0.shape != (B, H):
            raise ShapeMismatch(f"gru: initial state {s0.shape}, expected {(B, H)}")
        s0v = np.ascontiguousarray(s0.value)
        parents.append(s0)
    xu = (x.value.reshape(B * T, d_in) @ U.value + b.value).reshape(B, T, 3 * H)
    xu = np.ascontiguousarray(xu.transpose(1, 0, 2))
    w = np.ascontiguousarray(W.value)
    states, zs, rs, hs = kernels.gru_forward(xu, w, s0v)
    out = np.ascontiguousarray(states.transpose(1, 0, 2))

    def back(g):
        d_states = np.ascontiguousarray(g.transpose(1, 0, 2))
        d_xu, d_w, d_s0 = kernels.gru_backward(d_states, w, s0v, states, zs, rs, hs)
        d_xu_bt = d_xu.transpose(1, 0, 2).reshape(B * T, 3 * H)
        dx = (d_xu_bt @ U.value.T).reshape(B, T, d_in)
        dU = x.value.reshape(B * T, d_in).T @ d_xu_bt
        db = d_xu_bt.sum(axis=0)
        grads = [dx, dU, d_w, db]
        if s0 is not None:
            grads.append(d_s0)
        return tuple(grads)

    return _node(out, parents, back, "gru_sequence")


# ---------------------------------------------------------------- traversal

def _topo_order(root):
    order = []
    seen = set()
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- serialization

WEIGHTS_MAGIC = b"LCW1"


def save_params(fh, named):
    """Write ``{name: array}`` in the LCW1 container (float32 payloads)."""
    fh.write(WEIGHTS_MAGIC)
    fh.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        arr = np.asarray(arr.value if isinstance(arr, Tensor) else arr)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(fh):
    """Read an LCW1 container into an ordered ``{name: float64 array}``."""

    def take(n):
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError("truncated LCW1 container")
        return buf

    if take(4) != WEIGHTS_MAGIC:
        raise ValueError("not an LCW1 container")
    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        vals = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float64)
        out[name] = vals.reshape(dims)
    return out
