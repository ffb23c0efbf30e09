"""Reference numpy kernels for the fused GRU recursion.

Arrays are time-major: ``xu`` is (T, B, 3H) holding the input projections
plus biases for the update, reset and candidate gates in that order, ``w``
is (H, 3H) holding the recurrent matrices in the same order.
"""
import numpy as np


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def gru_forward(xu, w, s0):
    """Run the recursion over all time steps.

    Returns ``(states, z, r, h)`` each of shape (T, B, H); ``states[t]`` is
    the output after consuming step ``t``.
    """
    T, B, H3 = xu.shape
    H = H3 // 3
    w_zr = w[:, : 2 * H]
    w_h = w[:, 2 * H :]
    states = np.empty((T, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    hs = np.empty((T, B, H))
    s = s0
    for t in range(T):
        a = xu[t, :, : 2 * H] + s @ w_zr
        zr = _sigmoid(a)
        z = zr[:, :H]
        r = zr[:, H:]
        h = np.tanh(xu[t, :, 2 * H :] + (s * r) @ w_h)
        s = h + z * (s - h)
        states[t] = s
        zs[t] = z
        rs[t] = r
        hs[t] = h
    return states, zs, rs, hs


def gru_backward(d_states, w, s0, states, zs, rs, hs):
    """Gradients of the recursion.

    ``d_states`` is the upstream gradient w.r.t. every output state.
    Returns ``(d_xu, d_w, d_s0)``.
    """
    T, B, H = states.shape
    w_zr_t = np.ascontiguousarray(w[:, : 2 * H].T)
    w_h_t = np.ascontiguousarray(w[:, 2 * H :].T)
    d_xu = np.empty((T, B, 3 * H))
    ds = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        s_prev = states[t - 1] if t > 0 else s0
        z = zs[t]
        r = rs[t]
        h = hs[t]
        ds = ds + d_states[t]
        d_hpre = ds * (1.0 - z) * (1.0 - h * h)
        d_z = ds * (s_prev - h)
        ds_prev = ds * z
        d_sr = d_hpre @ w_h_t
        d_r = d_sr * s_prev
        ds_prev += d_sr * r
        d_zr = d_xu[t, :, : 2 * H]
        d_zr[:, :H] = d_z * z * (1.0 - z)
        d_zr[:, H:] = d_r * r * (1.0 - r)
        d_xu[t, :, 2 * H :] = d_hpre
        ds = ds_prev + d_zr @ w_zr_t
    s_prev_all = np.concatenate([s0[None], states[:-1]], axis=0).reshape(T * B, H)
    d_w = np.empty((H, 3 * H))
    flat = d_xu.reshape(T * B, 3 * H)
    d_w[:, : 2 * H] = s_prev_all.T @ flat[:, : 2 * H]
    d_w[:, 2 * H :] = (s_prev_all * rs.reshape(T * B, H)).T @ flat[:, 2 * H :]
    return d_xu, d_w, ds


def im2col(xp, k, stride, t_out):
    """Gather (B, t_out, k*C) windows from a padded (B, Tp, C) array."""
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    win = win[:, : stride * (t_out - 1) + 1 : stride]
    # (B, t_out, C, k) -> (B, t_out, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(xp.shape[0], t_out, k * xp.shape[2])


def col2im(dcols, tp, k, stride):
    """Adjoint of :func:`im2col`; ``dcols`` is (B, t_out, k, C)."""
    B, t_out, _, C = dcols.shape
    dxp = np.zeros((B, tp, C))
    stop = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, j : j + stop : stride] += dcols[:, :, j]
    return dxp
