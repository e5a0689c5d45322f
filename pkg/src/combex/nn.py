"""Batched numpy building blocks with hand-written backward passes."""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def masked_softmax(x, mask, axis=-1):
    """Softmax over entries where ``mask`` is true; masked entries get 0."""
    x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def masked_logsumexp(x, mask, axis=-1):
    x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(x - m).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + m
    return np.squeeze(out, axis=axis)


def lstm_step(x, h, c, W, b, m=None):
    """One LSTM step.  Gate order in ``W`` rows: input, forget, output, cell.

    ``m`` (shape ``(B, 1)``) freezes the state of rows where it is 0, which
    is how padding is skipped.
    """
    n = h.shape[1]
    xh = np.concatenate([x, h], axis=1)
    z = xh @ W.T + b
    i = sigmoid(z[:, :n])
    f = sigmoid(z[:, n:2 * n])
    o = sigmoid(z[:, 2 * n:3 * n])
    g = np.tanh(z[:, 3 * n:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    if m is not None:
        h_new = m * h_new + (1.0 - m) * h
        c_new = m * c_new + (1.0 - m) * c
    return h_new, c_new, (xh, c, i, f, o, g, tc, m)


def lstm_step_backward(dh, dc, cache, W, dW, db):
    """Backward of :func:`lstm_step`; accumulates into ``dW``/``db``.

    Returns ``(dx, dh_prev, dc_prev)``.
    """
    xh, c, i, f, o, g, tc, m = cache
    n = c.shape[1]
    if m is not None:
        dh_pass, dc_pass = (1.0 - m) * dh, (1.0 - m) * dc
        dh, dc = m * dh, m * dc
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c * f * (1.0 - f),
        do * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ], axis=1)
    dW += dz.T @ xh
    db += dz.sum(axis=0)
    dxh = dz @ W
    dx = dxh[:, : xh.shape[1] - n]
    dh_prev = dxh[:, xh.shape[1] - n:]
    dc_prev = dc * f
    if m is not None:
        dh_prev = dh_prev + dh_pass
        dc_prev = dc_prev + dc_pass
    return dx, dh_prev, dc_prev
