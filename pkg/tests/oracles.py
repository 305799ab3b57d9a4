"""Independent reference implementations used as test oracles.

Everything here is deliberately separate from the package code paths it
checks: plain float64 numpy and explicit loops, no shared helpers.
"""

import math

import numpy as np


def conv2d_loops(x, w, b, padding=0, stride=1):
    """Nested-loop cross-correlation in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    xp = np.zeros((c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wd] = x
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for oy in range(h_out):
            for ox in range(w_out):
                acc = b[co]
                for ci in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            acc += w[co, ci, ky, kx] * xp[ci, oy * stride + ky, ox * stride + kx]
                out[co, oy, ox] = acc
    return out


def scan_loops(a_log, w_delta, b_delta, w_b, b_b, w_c, b_c, skip_d, x):
    """Float64 per-step selective scan, plain loops."""
    a_log = np.asarray(a_log, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    length, d = x.shape
    n = a_log.shape[1]
    a = -np.exp(a_log)
    h = np.zeros((d, n))
    out = np.zeros((length, d))
    for t in range(length):
        xt = x[t]
        delta = np.zeros(d)
        for di in range(d):
            acc = b_delta[di]
            for j in range(d):
                acc += w_delta[di, j] * xt[j]
            delta[di] = math.log1p(math.exp(-abs(acc))) + max(acc, 0.0)
        bt = np.asarray(b_b, dtype=np.float64) + np.asarray(w_b, dtype=np.float64) @ xt
        ct = np.asarray(b_c, dtype=np.float64) + np.asarray(w_c, dtype=np.float64) @ xt
        for di in range(d):
            for ni in range(n):
                a_bar = math.exp(delta[di] * a[di, ni])
                bx = delta[di] * bt[ni] * xt[di]
                h[di, ni] = a_bar * h[di, ni] + bx
        for di in range(d):
            acc = skip_d[di] * xt[di]
            for ni in range(n):
                acc += ct[ni] * h[di, ni]
            out[t, di] = acc
    return out


def scan_loops_from_params(params, x):
    return scan_loops(params.a_log.data, params.w_delta.data, params.b_delta.data,
                      params.w_b.data, params.b_b.data, params.w_c.data,
                      params.b_c.data, params.skip_d.data, x)


def bidirectional_loops(params_fwd, params_bwd, x):
    """Two-pass float64 oracle for the bidirectional scan."""
    x = np.asarray(x, dtype=np.float64)
    fwd = scan_loops_from_params(params_fwd, x)
    bwd = scan_loops_from_params(params_bwd, x[::-1])
    return fwd + bwd[::-1]


def confusion_loops(pred, label, k, ignore_index=255):
    """Brute-force confusion matrix and metrics."""
    confusion = np.zeros((k, k), dtype=np.int64)
    for p, l in zip(np.asarray(pred).reshape(-1), np.asarray(label).reshape(-1)):
        if l == ignore_index:
            continue
        confusion[int(l), int(p)] += 1
    ious = []
    per_class = []
    for c in range(k):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        union = tp + fp + fn
        if union == 0:
            per_class.append(None)
        else:
            v = tp / union
            per_class.append(v)
            ious.append(v)
    acc = np.trace(confusion) / confusion.sum()
    return confusion, per_class, float(np.mean(ious)), float(acc)


# ---------------------------------------------------------------------------
# straight-line float64 re-implementation of the full fusion module
# (spatial attention + 2D scan + residual, then temporal attention +
# bidirectional scan + residual), mirroring the pinned interpretation choices.


def _sigmoid(v):
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-v)), np.exp(v) / (1.0 + np.exp(v)))


def _conv2d_same(x, w, b):
    k = w.shape[2]
    return conv2d_loops(x, w, b, padding=(k - 1) // 2, stride=1)


def _scan_seq_arrays(p, x):
    return scan_loops(p.a_log.data, p.w_delta.data, p.b_delta.data, p.w_b.data,
                      p.b_b.data, p.w_c.data, p.b_c.data, p.skip_d.data, x)


def _ss2d_ref(x, scans):
    c, h, w = x.shape
    pos = np.arange(h * w)
    orders = [pos, pos[::-1], pos.reshape(h, w).T.reshape(-1),
              pos.reshape(h, w).T.reshape(-1)[::-1]]
    params = [scans.row_f, scans.row_b, scans.col_f, scans.col_b]
    flat = x.reshape(c, h * w)
    acc = []
    for order, p in zip(orders, params):
        seq = flat[:, order].T                # (L, C)
        y = _scan_seq_arrays(p, seq)
        back = np.zeros((h * w, c))
        back[order] = y
        acc.append(back.T.reshape(c, h, w))
    return (acc[0] + acc[1]) + (acc[2] + acc[3])


def _spatial_attention_ref(x, w, b):
    pooled = np.stack([x.mean(axis=0), x.max(axis=0)])
    return _sigmoid(_conv2d_same(pooled, w, b))


def csim_ref(event, image, p):
    e = np.asarray(event, dtype=np.float64)
    i = np.asarray(image, dtype=np.float64)
    f = e + i
    stack = np.concatenate([
        e.mean(axis=0, keepdims=True), e.max(axis=0, keepdims=True),
        i.mean(axis=0, keepdims=True), i.max(axis=0, keepdims=True),
        f.mean(axis=0, keepdims=True), f.max(axis=0, keepdims=True),
    ])
    hidden = np.maximum(_conv2d_same(stack, p.conv1_w.data, p.conv1_b.data), 0.0)
    w_s = _sigmoid(_conv2d_same(hidden, p.conv2_w.data, p.conv2_b.data))
    w_e, w_i, w_f = w_s[0:1], w_s[1:2], w_s[2:3]
    e_c = e * w_i * w_f
    i_c = i * w_e * w_f
    f_c = np.concatenate([e_c, i_c])
    f_s = _ss2d_ref(f_c, p.scans)
    c = e.shape[0]
    e_s, i_s = f_s[:c], f_s[c:]
    e_out = e + e_s * _spatial_attention_ref(e_s, p.sa_event_w.data, p.sa_event_b.data)
    i_out = i + i_s * _spatial_attention_ref(i_s, p.sa_image_w.data, p.sa_image_b.data)
    return e_out, i_out


def _mlp_ref(v, rw, rb, ew, eb):
    hid = np.maximum(rw.reshape(rw.shape[0], -1) @ v + rb, 0.0)
    return ew.reshape(ew.shape[0], -1) @ hid + eb


def ctim_ref(event, image, p):
    e = np.asarray(event, dtype=np.float64)
    i = np.asarray(image, dtype=np.float64)
    c, h, w = e.shape
    inter = np.empty((2 * c, h, w))
    inter[0::2] = i
    inter[1::2] = e
    f_max = inter.reshape(2 * c, -1).max(axis=1)
    f_avg = inter.reshape(2 * c, -1).mean(axis=1)
    shared = lambda v: _mlp_ref(v, p.reduce_w.data, p.reduce_b.data,
                                p.expand_w.data, p.expand_b.data)
    w_t = _sigmoid(shared(f_max) + shared(f_avg)).reshape(c, 1, 1)
    e_c = e * w_t
    i_c = i * w_t
    seq = np.concatenate([e_c, i_c]).reshape(2 * c, h * w)   # channels as time
    fwd = _scan_seq_arrays(p.s6_fwd, seq)
    bwd = _scan_seq_arrays(p.s6_bwd, seq[::-1])[::-1]
    f_b = (fwd + bwd).reshape(2 * c, h, w)
    e_b, i_b = f_b[:c], f_b[c:]

    def ta(x, rw, rb, ew, eb):
        avg = x.reshape(c, -1).mean(axis=1)
        mx = x.reshape(c, -1).max(axis=1)
        return _sigmoid(_mlp_ref(avg, rw, rb, ew, eb)
                        + _mlp_ref(mx, rw, rb, ew, eb)).reshape(c, 1, 1)

    e_out = e + e_b * ta(e_b, p.ta_event_reduce_w.data, p.ta_event_reduce_b.data,
                         p.ta_event_expand_w.data, p.ta_event_expand_b.data)
    i_out = i + i_b * ta(i_b, p.ta_image_reduce_w.data, p.ta_image_reduce_b.data,
                         p.ta_image_expand_w.data, p.ta_image_expand_b.data)
    return e_out, i_out


def ddim_ref(event, image, p_s, p_t):
    e, i = csim_ref(event, image, p_s)
    return ctim_ref(e, i, p_t)


# ---------------------------------------------------------------------------
# graph-walk cost oracle


def walk_macs(tape) -> int:
    """Sum multiply-accumulates over recorded tape nodes from their shapes."""
    total = 0
    for node in tape.nodes:
        name = node.name
        if name == "conv2d":
            w = node.inputs[1]
            _, h_out, w_out = node.out.shape
            total += w.size * h_out * w_out
        elif name == "matmul":
            m, k = node.inputs[0].shape
            total += m * k * node.inputs[1].shape[1]
        elif name in ("linear_recurrence", "parallel_recurrence"):
            length, d, n = node.inputs[0].shape
            total += length * d * n
        elif name == "s6_output":
            length, d, n = node.inputs[0].shape
            total += length * d * (n + 1)
    return total
