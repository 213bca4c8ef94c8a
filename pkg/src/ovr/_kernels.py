"""Compiled inner loop for frame-by-frame inference."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def flstm_scan(proj, w_hh, out):
    """Run the frequency LSTM across the bins of one frame.

    proj: (K, 4H) input projection with both biases already added
    w_hh: (4H, H) recurrent weights, gate order (i, f, g, o)
    out:  (K, H) hidden states, written in place
    """
    n_bins = proj.shape[0]
    hidden = w_hh.shape[1]
    h = np.zeros(hidden, dtype=proj.dtype)
    c = np.zeros(hidden, dtype=proj.dtype)
    for k in range(n_bins):
        z = proj[k] + np.dot(w_hh, h)
        for j in range(hidden):
            i = 1.0 / (1.0 + math.exp(-z[j]))
            f = 1.0 / (1.0 + math.exp(-z[hidden + j]))
            g = math.tanh(z[2 * hidden + j])
            o = 1.0 / (1.0 + math.exp(-z[3 * hidden + j]))
            c[j] = f * c[j] + i * g
            h[j] = o * math.tanh(c[j])
            out[k, j] = h[j]
