# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled recurrence kernels for the selective scan hot loop.

Typed-memoryview loops over (L, D, N) arrays; fused float/double so the
float64 oracle paths use the same code. Arithmetic order matches the numpy
fallback exactly (compiled with -ffp-contract=off), so results are
bit-identical across backends.
"""

ctypedef fused real:
    float
    double


def recurrence_forward(real[:, :, ::1] a, real[:, :, ::1] b, real[:, :, ::1] h):
    """h[t] = a[t] * h[t-1] + b[t] with h[-1] = 0; h written in place."""
    cdef Py_ssize_t L = a.shape[0]
    cdef Py_ssize_t D = a.shape[1]
    cdef Py_ssize_t N = a.shape[2]
    cdef Py_ssize_t t, d, n
    for d in range(D):
        for n in range(N):
            h[0, d, n] = b[0, d, n]
    for t in range(1, L):
        for d in range(D):
            for n in range(N):
                h[t, d, n] = a[t, d, n] * h[t - 1, d, n] + b[t, d, n]


def recurrence_backward(real[:, :, ::1] a, real[:, :, ::1] h,
                        real[:, :, ::1] grad_h,
                        real[:, :, ::1] grad_a, real[:, :, ::1] grad_b):
    """Adjoint of recurrence_forward; grad_a/grad_b written in place."""
    cdef Py_ssize_t L = a.shape[0]
    cdef Py_ssize_t D = a.shape[1]
    cdef Py_ssize_t N = a.shape[2]
    cdef Py_ssize_t t, d, n
    cdef real s
    for d in range(D):
        for n in range(N):
            s = grad_h[L - 1, d, n]
            grad_b[L - 1, d, n] = s
            grad_a[L - 1, d, n] = s * h[L - 2, d, n] if L > 1 else <real> 0.0
            for t in range(L - 2, -1, -1):
                s = grad_h[t, d, n] + a[t + 1, d, n] * s
                grad_b[t, d, n] = s
                grad_a[t, d, n] = s * h[t - 1, d, n] if t > 0 else <real> 0.0
