"""Compiled inner loops for the recurrent cell and the alignment recursion.

Everything here is written with explicit scalar loops so results are
bit-reproducible for fixed inputs: no BLAS dispatch, no threading inside a
kernel. All arrays are float64 and C-contiguous.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, nogil=True)
def lstm_forward(x, w, b):  # pragma: no cover - exercised via seqmodel tests
    """One gated recurrent layer over a sequence in processing order.

    x: (T, din) inputs, w: (4H, din + H) stacked gate weights in i,f,o,g
    order applied to [x_t, h_{t-1}], b: (4H,). Initial hidden and cell
    states are zero. Returns (gates, cells, hiddens) where gates holds the
    post-activation gate values.
    """
    T, din = x.shape
    h4 = w.shape[0]
    H = h4 // 4
    gates = np.empty((T, h4))
    cells = np.empty((T, H))
    hiddens = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        for r in range(h4):
            acc = b[r]
            for j in range(din):
                acc += w[r, j] * x[t, j]
            for j in range(H):
                acc += w[r, din + j] * h_prev[j]
            gates[t, r] = acc
        for k in range(H):
            gi = 1.0 / (1.0 + math.exp(-gates[t, k]))
            gf = 1.0 / (1.0 + math.exp(-gates[t, H + k]))
            go = 1.0 / (1.0 + math.exp(-gates[t, 2 * H + k]))
            gg = math.tanh(gates[t, 3 * H + k])
            c = gf * c_prev[k] + gi * gg
            gates[t, k] = gi
            gates[t, H + k] = gf
            gates[t, 2 * H + k] = go
            gates[t, 3 * H + k] = gg
            cells[t, k] = c
            hiddens[t, k] = go * math.tanh(c)
        for k in range(H):
            c_prev[k] = cells[t, k]
            h_prev[k] = hiddens[t, k]
    return gates, cells, hiddens


@njit(cache=True, nogil=True)
def lstm_backward(x, w, gates, cells, hiddens, dh_out):  # pragma: no cover
    """Backpropagation through time for one layer in processing order.

    dh_out: (T, H) gradient w.r.t. the layer's hidden outputs. Returns
    (dx, dw, db) matching the shapes of x, w, b.
    """
    T, din = x.shape
    h4 = w.shape[0]
    H = h4 // 4
    dx = np.zeros((T, din))
    dw = np.zeros(w.shape)
    db = np.zeros(h4)
    dh_rec = np.zeros(H)
    dc = np.zeros(H)
    dz = np.empty(h4)
    for t in range(T - 1, -1, -1):
        for k in range(H):
            gi = gates[t, k]
            gf = gates[t, H + k]
            go = gates[t, 2 * H + k]
            gg = gates[t, 3 * H + k]
            tc = math.tanh(cells[t, k])
            dh = dh_out[t, k] + dh_rec[k]
            d_o = dh * tc
            dck = dc[k] + dh * go * (1.0 - tc * tc)
            d_i = dck * gg
            d_g = dck * gi
            c_before = cells[t - 1, k] if t > 0 else 0.0
            d_f = dck * c_before
            dz[k] = d_i * gi * (1.0 - gi)
            dz[H + k] = d_f * gf * (1.0 - gf)
            dz[2 * H + k] = d_o * go * (1.0 - go)
            dz[3 * H + k] = d_g * (1.0 - gg * gg)
            dc[k] = dck * gf
        for k in range(H):
            dh_rec[k] = 0.0
        for r in range(h4):
            dzr = dz[r]
            db[r] += dzr
            for j in range(din):
                dw[r, j] += dzr * x[t, j]
                dx[t, j] += dzr * w[r, j]
            if t > 0:
                for j in range(H):
                    dw[r, din + j] += dzr * hiddens[t - 1, j]
                    dh_rec[j] += dzr * w[r, din + j]
    return dx, dw, db


@njit(cache=True, nogil=True)
def linear_forward(h, w, b):  # pragma: no cover
    """Affine map per frame: h (T, H) x w (O, H) + b (O,) -> (T, O)."""
    T, H = h.shape
    O = w.shape[0]
    out = np.empty((T, O))
    for t in range(T):
        for r in range(O):
            acc = b[r]
            for j in range(H):
                acc += w[r, j] * h[t, j]
            out[t, r] = acc
    return out


@njit(cache=True, nogil=True)
def linear_backward(h, w, dout):  # pragma: no cover
    T, H = h.shape
    O = w.shape[0]
    dh = np.zeros((T, H))
    dw = np.zeros((O, H))
    db = np.zeros(O)
    for t in range(T):
        for r in range(O):
            g = dout[t, r]
            db[r] += g
            for j in range(H):
                dw[r, j] += g * h[t, j]
                dh[t, j] += g * w[r, j]
    return dh, dw, db


@njit(cache=True, nogil=True)
def ctc_loss_grad(log_probs, ext, can_skip):  # pragma: no cover
    """Alignment-marginal negative log-likelihood and its grid gradient.

    log_probs: (T, K) log of per-frame symbol probabilities. ext: (S,)
    blank-interleaved target labels, S = 2L + 1. can_skip[s] marks states
    reachable from s-2. Runs entirely in log space.

    The recursion tracks "exclusive" forward/backward scores that omit the
    emission at the current frame; the gradient of the path-sum w.r.t. a
    grid entry is then a plain sum of exp(fwd_excl + bwd_excl) terms, which
    stays finite even at zero-probability entries.
    """
    T, K = log_probs.shape
    S = ext.shape[0]
    fwd_excl = np.full((T, S), NEG_INF)
    bwd_excl = np.full((T, S), NEG_INF)
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)

    fwd_excl[0, 0] = 0.0
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        fwd_excl[0, 1] = 0.0
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            m = alpha[t - 1, s]
            if s >= 1 and alpha[t - 1, s - 1] > m:
                m = alpha[t - 1, s - 1]
            if s >= 2 and can_skip[s] and alpha[t - 1, s - 2] > m:
                m = alpha[t - 1, s - 2]
            if m == NEG_INF:
                continue
            acc = math.exp(alpha[t - 1, s] - m)
            if s >= 1:
                acc += math.exp(alpha[t - 1, s - 1] - m)
            if s >= 2 and can_skip[s]:
                acc += math.exp(alpha[t - 1, s - 2] - m)
            fwd_excl[t, s] = m + math.log(acc)
            alpha[t, s] = fwd_excl[t, s] + log_probs[t, ext[s]]

    bwd_excl[T - 1, S - 1] = 0.0
    beta[T - 1, S - 1] = log_probs[T - 1, ext[S - 1]]
    if S > 1:
        bwd_excl[T - 1, S - 2] = 0.0
        beta[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            m = beta[t + 1, s]
            if s + 1 < S and beta[t + 1, s + 1] > m:
                m = beta[t + 1, s + 1]
            if s + 2 < S and can_skip[s + 2] and beta[t + 1, s + 2] > m:
                m = beta[t + 1, s + 2]
            if m == NEG_INF:
                continue
            acc = math.exp(beta[t + 1, s] - m)
            if s + 1 < S:
                acc += math.exp(beta[t + 1, s + 1] - m)
            if s + 2 < S and can_skip[s + 2]:
                acc += math.exp(beta[t + 1, s + 2] - m)
            bwd_excl[t, s] = m + math.log(acc)
            beta[t, s] = bwd_excl[t, s] + log_probs[t, ext[s]]

    log_z = alpha[T - 1, S - 1]
    if S > 1 and alpha[T - 1, S - 2] > log_z:
        log_z = alpha[T - 1, S - 2]
    if log_z != NEG_INF:
        acc = math.exp(alpha[T - 1, S - 1] - log_z)
        if S > 1:
            acc += math.exp(alpha[T - 1, S - 2] - log_z)
        log_z += math.log(acc)

    grad = np.zeros((T, K))
    if log_z == NEG_INF:
        return np.inf, grad
    for t in range(T):
        m = NEG_INF
        for s in range(S):
            v = fwd_excl[t, s] + bwd_excl[t, s]
            if v > m:
                m = v
        if m == NEG_INF:
            continue
        for s in range(S):
            v = fwd_excl[t, s] + bwd_excl[t, s]
            if v != NEG_INF:
                grad[t, ext[s]] += math.exp(v - m)
        scale = math.exp(m - log_z)
        for k in range(K):
            grad[t, k] = -grad[t, k] * scale
    return -log_z, grad
