"""Network building blocks: GRU cell and stack, dot-product attention,
1-D convolution, batch normalization and the residual block."""
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch


class Module:
    """Minimal parameter container with hierarchical names.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    numpy arrays listed in ``_buffer_names``; child modules may be plain
    attributes or lists.
    """

    training = True
    _buffer_names = ()

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}{i}", item

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key in self._buffer_names:
            yield prefix + key, getattr(self, key)
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def state_dict(self):
        """Every parameter and buffer, including frozen tensors, by name."""
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out[key] = val.value
        for key in self._buffer_names:
            out[key] = getattr(self, key)
        for key, child in self._children():
            for sub, arr in child.state_dict().items():
                out[f"{key}.{sub}"] = arr
        return out

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing entries: {sorted(missing)[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeMismatch(f"{name}: stored {src.shape}, model {arr.shape}")
            arr[...] = src

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def count_parameters(self):
        return int(sum(p.value.size for p in self.parameters()))


def _param(value):
    return Tensor(value, requires_grad=True)


# ---------------------------------------------------------------- GRU


class GruParams(Module):
    """Weights of one GRU layer.

    ``U_*`` map the input (d_in x d_h), ``W_*`` map the previous state
    (d_h x d_h); gates are update (z), reset (r) and candidate (h).
    With ``freeze_bias`` the biases stay at zero and receive no gradient.
    """

    def __init__(self, d_in, d_h, rng=None, freeze_bias=False):
        self.d_in = d_in
        self.d_h = d_h
        self.freeze_bias = freeze_bias
        bound = math.sqrt(1.0 / d_h)

        def mat(rows):
            if rng is None:
                return _param(np.zeros((rows, d_h)))
            return _param(rng.uniform(-bound, bound, size=(rows, d_h)))

        self.U_z, self.U_r, self.U_h = mat(d_in), mat(d_in), mat(d_in)
        self.W_z, self.W_r, self.W_h = mat(d_h), mat(d_h), mat(d_h)
        for name in ("b_z", "b_r", "b_h"):
            setattr(self, name, Tensor(np.zeros(d_h), requires_grad=not freeze_bias))

    def fused(self):
        """Concatenated (U, W, b) in update/reset/candidate order."""
        U = ad.concat([self.U_z, self.U_r, self.U_h], axis=1)
        W = ad.concat([self.W_z, self.W_r, self.W_h], axis=1)
        b = ad.concat([self.b_z, self.b_r, self.b_h], axis=0)
        return U, W, b

    def forward_sequence(self, seq, s0=None):
        U, W, b = self.fused()
        return ad.gru_sequence(seq, s0, U, W, b)


def gru_cell_step(x_t, s_prev, p):
    """One GRU update written gate by gate.

    ``x_t`` is (..., d_in) and ``s_prev`` is (..., d_h); returns the new state.
    """
    x_t, s_prev = ad.as_tensor(x_t), ad.as_tensor(s_prev)
    if x_t.shape[-1] != p.d_in or s_prev.shape[-1] != p.d_h:
        raise ShapeMismatch(f"gru cell: x {x_t.shape}, s {s_prev.shape} vs ({p.d_in}, {p.d_h})")
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = ad.reshape(x_t, (1, p.d_in))
        s_prev = ad.reshape(s_prev, (1, p.d_h))
    z = ad.sigmoid(x_t @ p.U_z + s_prev @ p.W_z + p.b_z)
    r = ad.sigmoid(x_t @ p.U_r + s_prev @ p.W_r + p.b_r)
    h = ad.tanh(x_t @ p.U_h + (s_prev * r) @ p.W_h + p.b_h)
    s_t = (1.0 - z) * h + z * s_prev
    if squeeze:
        s_t = ad.reshape(s_t, (p.d_h,))
    return s_t


class GRUStack(Module):
    """Stacked GRU layers; layer i consumes the full state sequence of layer i-1."""

    def __init__(self, d_in, d_h, n_layers, rng=None, freeze_bias=False):
        if n_layers < 1:
            raise ValueError("a GRU stack needs at least one layer")
        self.d_in = d_in
        self.d_h = d_h
        self.gru = [
            GruParams(d_in if i == 0 else d_h, d_h, rng, freeze_bias) for i in range(n_layers)
        ]

    @property
    def n_layers(self):
        return len(self.gru)

    def __call__(self, seq, initial_states=None):
        return self.forward(seq, initial_states)

    def forward(self, seq, initial_states=None):
        """Return ``(top_sequence, final_states)``.

        ``seq`` is (batch, T, d_in) or (T, d_in); states default to zero.
        """
        seq = ad.as_tensor(seq)
        unbatched = seq.ndim == 2
        if unbatched:
            seq = ad.reshape(seq, (1,) + seq.shape)
        if seq.ndim != 3 or seq.shape[2] != self.d_in:
            raise ShapeMismatch(f"GRU stack expects (batch, T, {self.d_in}), got {seq.shape}")
        if initial_states is not None and len(initial_states) != self.n_layers:
            raise ShapeMismatch("one initial state per layer required")
        finals = []
        h = seq
        for i, layer in enumerate(self.gru):
            s0 = None
            if initial_states is not None and initial_states[i] is not None:
                s0 = ad.as_tensor(initial_states[i])
                if unbatched and s0.ndim == 1:
                    s0 = ad.reshape(s0, (1, self.d_h))
            h = layer.forward_sequence(h, s0)
            finals.append(h[:, -1])
        if unbatched:
            h = ad.reshape(h, h.shape[1:])
            finals = [ad.reshape(f, (self.d_h,)) for f in finals]
        return h, finals

    def step(self, x_t, states):
        """Advance every layer one time step with the composed cell."""
        new = []
        inp = x_t
        for layer, s in zip(self.gru, states):
            inp = gru_cell_step(inp, s, layer)
            new.append(inp)
        return inp, new


# ---------------------------------------------------------------- attention


def attention(query, encoder_states):
    """Scaled dot-product attention over encoder states.

    ``query`` is (d_h,) or (batch, d_h); ``encoder_states`` is (T, d_h) or
    (batch, T, d_h). Returns ``(context, weights)``.
    """
    q, enc = ad.as_tensor(query), ad.as_tensor(encoder_states)
    unbatched = q.ndim == 1
    if unbatched:
        q = ad.reshape(q, (1,) + q.shape)
        enc = ad.reshape(enc, (1,) + enc.shape)
    if enc.ndim != 3 or q.ndim != 2 or enc.shape[0] != q.shape[0] or enc.shape[2] != q.shape[1]:
        raise ShapeMismatch(f"attention: query {query.shape} vs states {encoder_states.shape}")
    B, T, d = enc.shape
    scores = ad.reshape(enc @ ad.reshape(q, (B, d, 1)), (B, T))
    weights = ad.softmax(ad.scale(scores, 1.0 / math.sqrt(d)), axis=-1)
    context = ad.reshape(ad.reshape(weights, (B, 1, T)) @ enc, (B, d))
    if unbatched:
        context = ad.reshape(context, (d,))
        weights = ad.reshape(weights, (T,))
    return context, weights


# ---------------------------------------------------------------- dense / conv


class Dense(Module):
    def __init__(self, d_in, d_out, rng=None):
        bound = math.sqrt(1.0 / d_in)
        w = np.zeros((d_in, d_out)) if rng is None else rng.uniform(-bound, bound, (d_in, d_out))
        self.W = _param(w)
        self.b = _param(np.zeros(d_out))

    def __call__(self, x):
        return ad.as_tensor(x) @ self.W + self.b


class Conv1d(Module):
    """Kernel (k, c_in, c_out), He-normal initialised."""

    def __init__(self, c_in, c_out, kernel_size, stride=1, rng=None, bias=False):
        self.c_in = c_in
        self.c_out = c_out
        self.kernel_size = kernel_size
        self.stride = stride
        shape = (kernel_size, c_in, c_out)
        if rng is None:
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, math.sqrt(2.0 / (kernel_size * c_in)), size=shape)
        self.weight = _param(w)
        self.bias = _param(np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride, padding="same")


class BatchNorm1d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return ad.batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ResidualBlock(Module):
    """conv-BN-ReLU-dropout-conv-BN plus skip, then ReLU.

    The skip is the identity unless channels change or ``stride > 1``, in
    which case it is a strided 1x1 convolution.
    """

    def __init__(self, c_in, c_out, kernel_size, stride=1, dropout=0.2, rng=None):
        self.conv1 = Conv1d(c_in, c_out, kernel_size, stride, rng)
        self.bn1 = BatchNorm1d(c_out)
        self.conv2 = Conv1d(c_out, c_out, kernel_size, 1, rng)
        self.bn2 = BatchNorm1d(c_out)
        self.dropout = dropout
        self.projection = Conv1d(c_in, c_out, 1, stride, rng) if (c_in != c_out or stride > 1) else None
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __call__(self, x):
        return residual_block(x, self, self.training)


def residual_block(x, p, training):
    x = ad.as_tensor(x)
    if x.ndim != 3 or x.shape[2] != p.conv1.c_in:
        raise ShapeMismatch(f"residual block expects {p.conv1.c_in} input channels, got {x.shape}")
    y = ad.relu(p.bn1(p.conv1(x)))
    y = ad.dropout(y, p.dropout, training, p.rng)
    y = p.bn2(p.conv2(y))
    skip = x if p.projection is None else p.projection(x)
    return ad.relu(y + skip)
