"""Pure-numpy recurrence kernels (fallback backend).

Same contract and same arithmetic order as the compiled extension, so both
backends produce bit-identical results.
"""

import numpy as np


def recurrence_forward(a, b, h):
    """h[t] = a[t] * h[t-1] + b[t] with h[-1] = 0; arrays are (L, D, N),
    h is preallocated and written in place."""
    h[0] = b[0]
    for t in range(1, a.shape[0]):
        np.multiply(a[t], h[t - 1], out=h[t])
        h[t] += b[t]


def recurrence_backward(a, h, grad_h, grad_a, grad_b):
    """Adjoint of the recurrence.

    With s[t] = dL/dh[t] accumulated through later steps:
        s[t] = grad_h[t] + a[t+1] * s[t+1]
        grad_b[t] = s[t]
        grad_a[t] = s[t] * h[t-1]   (zero at t = 0)
    """
    L = a.shape[0]
    s = grad_h[L - 1].copy()
    grad_b[L - 1] = s
    if L > 1:
        grad_a[L - 1] = s * h[L - 2]
    else:
        grad_a[L - 1] = 0.0
    for t in range(L - 2, -1, -1):
        s = grad_h[t] + a[t + 1] * s
        grad_b[t] = s
        grad_a[t] = s * h[t - 1] if t > 0 else 0.0
