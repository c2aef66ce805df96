"""JIT-compiled inner loop for the collapsed label update.

The sweep is sequential in i (leave-one-out counts change after every draw),
so it cannot be vectorized; numba removes the interpreter overhead that would
otherwise dominate long runs. Uniform variates are drawn ahead of the call,
keeping the result bit-deterministic for a given RngState.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def collapsed_sweep(logdens, labels, counts, alpha, uniforms):
    """One systematic scan of collapsed label draws, in index order.

    P(z_i = k | rest) propto exp(logdens[i, k]) * (alpha[k] + n_{-i,k});
    ``labels`` and ``counts`` are updated in place after each draw.
    """
    n, K = logdens.shape
    w = np.empty(K)
    for i in range(n):
        zi = labels[i]
        counts[zi] -= 1
        m = -np.inf
        for k in range(K):
            w[k] = logdens[i, k] + np.log(alpha[k] + counts[k])
            if w[k] > m:
                m = w[k]
        total = 0.0
        for k in range(K):
            w[k] = np.exp(w[k] - m)
            total += w[k]
        u = uniforms[i] * total
        acc = 0.0
        z = K - 1
        for k in range(K):
            acc += w[k]
            if u < acc:
                z = k
                break
        labels[i] = z
        counts[z] += 1
