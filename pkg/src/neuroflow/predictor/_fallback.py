"""Pure-numpy single-sample forward pass, used when the extension is not built."""

from __future__ import annotations

import numpy as np


def forward_one(packed: tuple, xm: np.ndarray, xp: np.ndarray):
    Wm, bm, Wp, bp, E, Wq, Wk, Wv, W1, b1, W2, b2, wr, br, wc, bc, d, h = packed
    m = np.tanh(xm @ Wm + bm)
    H = np.tanh(xp @ Wp + bp + E)
    q = m @ Wq
    s = (H @ Wk) @ q / np.sqrt(d)
    s = np.exp(s - s.max())
    att = s / s.sum()
    r = m + att @ (H @ Wv)
    U = np.concatenate([np.broadcast_to(r, H.shape), H], axis=1)
    g2 = np.tanh(np.tanh(U @ W1 + b1) @ W2 + b2)
    return g2 @ wr + br, g2 @ wc + bc, att
