"""Hot numeric kernels: stacked-LSTM forward pass, backpropagation through
time, and the report checksum.

The kernels are written once as plain numpy functions and JIT-compiled with
numba when available. Backend selection is controlled by the environment
variable ``FEDREP_BACKEND``:

* ``auto`` (default): use numba when importable, else pure numpy
* ``numba``: require numba, fail if missing
* ``numpy``: force the pure-numpy interpretation of the same source

Both backends execute the identical operation sequence; ``np.dot`` is used
for every matrix-vector product in either mode. Gate blocks inside stacked
weight matrices are ordered [input, forget, output, candidate], i.e. rows
``[0:H]``, ``[H:2H]``, ``[2H:3H]``, ``[3H:4H]``.

Dropout masks are passed in explicitly (arrays of ones disable them) so all
random number generation stays outside the kernels, on the numpy side.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "lstm_layer_forward",
    "lstm_layer_backward",
    "forward_window",
    "backward_window",
    "batch_grad",
    "predict_batch",
    "fnv1a64",
    "warmup",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _lstm_layer_forward(x_seq, W, U, b, in_mask, rec_mask):
    """Run one LSTM layer over a full sequence with zero initial state.

    x_seq: (T, n_in) layer input, W: (4H, n_in), U: (4H, H), b: (4H,).
    in_mask / rec_mask: per-sequence dropout masks (ones when disabled).

    Returns (h_seq, c_seq, gates, tanh_c, xm) where h_seq and c_seq have
    shape (T+1, H) with the zero initial state at index 0, gates is (T, 4H)
    post-activation, tanh_c is (T, H), and xm is the masked input sequence.
    """
    T = x_seq.shape[0]
    H = U.shape[1]
    h_seq = np.zeros((T + 1, H))
    c_seq = np.zeros((T + 1, H))
    gates = np.zeros((T, 4 * H))
    tanh_c = np.zeros((T, H))
    xm = x_seq * in_mask
    for t in range(T):
        hm = h_seq[t] * rec_mask
        z = np.dot(W, xm[t]) + np.dot(U, hm) + b
        i_act = 1.0 / (1.0 + np.exp(-z[0:H]))
        f_act = 1.0 / (1.0 + np.exp(-z[H : 2 * H]))
        o_act = 1.0 / (1.0 + np.exp(-z[2 * H : 3 * H]))
        g_act = np.tanh(z[3 * H : 4 * H])
        c_t = f_act * c_seq[t] + i_act * g_act
        tc = np.tanh(c_t)
        gates[t, 0:H] = i_act
        gates[t, H : 2 * H] = f_act
        gates[t, 2 * H : 3 * H] = o_act
        gates[t, 3 * H : 4 * H] = g_act
        c_seq[t + 1] = c_t
        h_seq[t + 1] = o_act * tc
        tanh_c[t] = tc
    return h_seq, c_seq, gates, tanh_c, xm


def _lstm_layer_backward(
    dh_seq, h_seq, c_seq, gates, tanh_c, xm, W, U, in_mask, rec_mask, dW, dU, db
):
    """Backpropagate one LSTM layer, accumulating into dW, dU, db.

    dh_seq: (T, H) loss gradient arriving at h_t from above (row t-1 holds
    the gradient for step t). Returns the (T, n_in) gradient with respect
    to the unmasked layer input.
    """
    T = dh_seq.shape[0]
    H = U.shape[1]
    n_in = W.shape[1]
    dx = np.zeros((T, n_in))
    dc_next = np.zeros(H)
    dh_rec = np.zeros(H)
    dz = np.empty(4 * H)
    for t in range(T - 1, -1, -1):
        i_act = gates[t, 0:H]
        f_act = gates[t, H : 2 * H]
        o_act = gates[t, 2 * H : 3 * H]
        g_act = gates[t, 3 * H : 4 * H]
        tc = tanh_c[t]
        dh = dh_seq[t] + dh_rec
        do = dh * tc
        dc = dc_next + dh * o_act * (1.0 - tc * tc)
        di = dc * g_act
        dg = dc * i_act
        df = dc * c_seq[t]
        dc_next = dc * f_act
        dz[0:H] = di * i_act * (1.0 - i_act)
        dz[H : 2 * H] = df * f_act * (1.0 - f_act)
        dz[2 * H : 3 * H] = do * o_act * (1.0 - o_act)
        dz[3 * H : 4 * H] = dg * (1.0 - g_act * g_act)
        dW += dz[:, None] * xm[t][None, :]
        hm = h_seq[t] * rec_mask
        dU += dz[:, None] * hm[None, :]
        db += dz
        dx[t] = np.dot(dz, W) * in_mask
        dh_rec = np.dot(dz, U) * rec_mask
    return dx


def _forward_window(x_seq, W1, U1, b1, W2, U2, b2, Wd, bd, mx1, mh1, mx2, mh2):
    """Full forward pass over one window: two stacked LSTM layers, dense
    head on the final hidden state, ReLU on the head output.

    Returns the prediction plus every array the backward pass needs.
    """
    h1, c1, g1, tc1, xm1 = _lstm_layer_forward(x_seq, W1, U1, b1, mx1, mh1)
    h2, c2, g2, tc2, xm2 = _lstm_layer_forward(h1[1:], W2, U2, b2, mx2, mh2)
    zd = np.dot(Wd, h2[h2.shape[0] - 1]) + bd
    yhat = np.maximum(zd, 0.0)
    return yhat, zd, h1, c1, g1, tc1, xm1, h2, c2, g2, tc2, xm2


def _backward_window(
    y,
    yhat,
    zd,
    h1,
    c1,
    g1,
    tc1,
    xm1,
    h2,
    c2,
    g2,
    tc2,
    xm2,
    W1,
    U1,
    W2,
    U2,
    Wd,
    mx1,
    mh1,
    mx2,
    mh2,
    dW1,
    dU1,
    db1,
    dW2,
    dU2,
    db2,
    dWd,
    dbd,
):
    """Accumulate the gradient of the per-window MSE into the d* arrays.

    Loss is mean((y - yhat)^2) over the head outputs; the ReLU gate zeroes
    the gradient wherever the head pre-activation is non-positive.
    """
    T = g1.shape[0]
    H2 = U2.shape[1]
    out = y.shape[0]
    dz_d = np.where(zd > 0.0, (2.0 / out) * (yhat - y), 0.0)
    h2_last = h2[h2.shape[0] - 1]
    dWd += dz_d[:, None] * h2_last[None, :]
    dbd += dz_d
    dh2_seq = np.zeros((T, H2))
    dh2_seq[T - 1] = np.dot(dz_d, Wd)
    dh1_seq = _lstm_layer_backward(
        dh2_seq, h2, c2, g2, tc2, xm2, W2, U2, mx2, mh2, dW2, dU2, db2
    )
    _lstm_layer_backward(
        dh1_seq, h1, c1, g1, tc1, xm1, W1, U1, mx1, mh1, dW1, dU1, db1
    )


def _batch_grad(
    xb, yb, W1, U1, b1, W2, U2, b2, Wd, bd, mx1b, mh1b, mx2b, mh2b
):
    """Mean gradient and mean per-example MSE over a batch of windows.

    xb: (B, T, n_in) windows, yb: (B, out) targets, m*b: per-example
    dropout masks. The batch gradient is the exact mean of per-example
    gradients: each example is processed with the same per-window routine
    the public forward/backward path uses, then the accumulated sums are
    divided by the batch size.
    """
    B = xb.shape[0]
    dW1 = np.zeros_like(W1)
    dU1 = np.zeros_like(U1)
    db1 = np.zeros_like(b1)
    dW2 = np.zeros_like(W2)
    dU2 = np.zeros_like(U2)
    db2 = np.zeros_like(b2)
    dWd = np.zeros_like(Wd)
    dbd = np.zeros_like(bd)
    loss = 0.0
    for e in range(B):
        yhat, zd, h1, c1, g1, tc1, xm1, h2, c2, g2, tc2, xm2 = _forward_window(
            xb[e], W1, U1, b1, W2, U2, b2, Wd, bd,
            mx1b[e], mh1b[e], mx2b[e], mh2b[e],
        )
        r = yhat - yb[e]
        loss += np.mean(r * r)
        _backward_window(
            yb[e], yhat, zd, h1, c1, g1, tc1, xm1, h2, c2, g2, tc2, xm2,
            W1, U1, W2, U2, Wd,
            mx1b[e], mh1b[e], mx2b[e], mh2b[e],
            dW1, dU1, db1, dW2, dU2, db2, dWd, dbd,
        )
    inv = 1.0 / B
    dW1 *= inv
    dU1 *= inv
    db1 *= inv
    dW2 *= inv
    dU2 *= inv
    db2 *= inv
    dWd *= inv
    dbd *= inv
    return dW1, dU1, db1, dW2, dU2, db2, dWd, dbd, loss * inv


def _predict_batch(xb, W1, U1, b1, W2, U2, b2, Wd, bd):
    """Inference-mode predictions for a batch of windows: (B, out)."""
    B = xb.shape[0]
    n_in = xb.shape[2]
    H1 = U1.shape[1]
    H2 = U2.shape[1]
    out = bd.shape[0]
    mx1 = np.ones(n_in)
    mh1 = np.ones(H1)
    mx2 = np.ones(H1)
    mh2 = np.ones(H2)
    preds = np.zeros((B, out))
    for e in range(B):
        yhat = _forward_window(
            xb[e], W1, U1, b1, W2, U2, b2, Wd, bd, mx1, mh1, mx2, mh2
        )[0]
        preds[e] = yhat
    return preds


def _fnv1a64_arr(buf):
    """FNV-1a 64-bit over a uint8 array (njit-friendly variant)."""
    h = np.uint64(_FNV_OFFSET)
    p = np.uint64(_FNV_PRIME)
    for i in range(buf.shape[0]):
        h = (h ^ np.uint64(buf[i])) * p
    return h


def _fnv1a64_py(data: bytes) -> int:
    # Pure-python fallback; plain ints avoid numpy scalar overflow warnings.
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _resolve_backend() -> str:
    choice = os.environ.get("FEDREP_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise RuntimeError(
            f"FEDREP_BACKEND must be one of auto/numba/numpy, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError("FEDREP_BACKEND=numba but numba is not importable")
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()

if BACKEND == "numba":
    from numba import njit

    _jit = njit(cache=True, nogil=True)
    # Rebind bottom-up so jitted callers resolve jitted callees.
    _lstm_layer_forward = _jit(_lstm_layer_forward)
    _lstm_layer_backward = _jit(_lstm_layer_backward)
    _forward_window = _jit(_forward_window)
    _backward_window = _jit(_backward_window)
    _batch_grad = _jit(_batch_grad)
    _predict_batch = _jit(_predict_batch)
    _fnv1a64_arr = _jit(_fnv1a64_arr)

lstm_layer_forward = _lstm_layer_forward
lstm_layer_backward = _lstm_layer_backward
forward_window = _forward_window
backward_window = _backward_window
batch_grad = _batch_grad
predict_batch = _predict_batch


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit checksum of a byte string."""
    if BACKEND == "numba":
        return int(_fnv1a64_arr(np.frombuffer(data, dtype=np.uint8)))
    return _fnv1a64_py(data)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny shapes.

    No-op numerically; lets callers exclude one-time compilation cost from
    timed sections.
    """
    T, n_in, H1, H2, out = 3, 1, 2, 2, 1
    x = np.zeros((1, T, n_in))
    y = np.zeros((1, out))
    W1 = np.zeros((4 * H1, n_in))
    U1 = np.zeros((4 * H1, H1))
    b1 = np.zeros(4 * H1)
    W2 = np.zeros((4 * H2, H1))
    U2 = np.zeros((4 * H2, H2))
    b2 = np.zeros(4 * H2)
    Wd = np.zeros((out, H2))
    bd = np.zeros(out)
    ones = np.ones((1, 1))
    m1 = np.ones((1, H1))
    m2 = np.ones((1, H2))
    batch_grad(x, y, W1, U1, b1, W2, U2, b2, Wd, bd, ones, m1, m1.copy(), m2)
    predict_batch(x, W1, U1, b1, W2, U2, b2, Wd, bd)
    fnv1a64(b"warmup")
