# cython: boundscheck=False, wraparound=False, cdivision=True
"""BLAS-backed dense-layer kernels (compiled backend).

Same four operations and semantics as ``gradmarket._kernels_py``; that module
is the readable reference.  Matrix products go through BLAS dgemm with the
row-major/column-major swap trick; tanh runs as a tight C loop.
"""
from libc.math cimport tanh as ctanh

from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    # Row-major C(m,n) = op(A) @ op(B): call column-major BLAS on the
    # transposed product (swap operands, swap m/n).
    cdef double alpha = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def linear_forward(double[:, ::1] X, double[:, ::1] W, double[::1] b, double[:, ::1] out):
    """out = X @ W + b, bias broadcast over rows."""
    cdef int rows = X.shape[0], din = X.shape[1], dout = W.shape[1]
    if W.shape[0] != din or out.shape[0] != rows or out.shape[1] != dout or b.shape[0] != dout:
        raise ValueError("linear_forward: shape mismatch")
    cdef Py_ssize_t i, j
    with nogil:
        _gemm(c'N', c'N', rows, dout, din, &X[0, 0], din, &W[0, 0], dout, 0.0, &out[0, 0], dout)
        for i in range(rows):
            for j in range(dout):
                out[i, j] += b[j]


def tanh_forward(double[:, ::1] Z, double[:, ::1] out):
    """out = tanh(Z); out may alias Z."""
    if Z.shape[0] != out.shape[0] or Z.shape[1] != out.shape[1]:
        raise ValueError("tanh_forward: shape mismatch")
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(Z.shape[0]):
            for j in range(Z.shape[1]):
                out[i, j] = ctanh(Z[i, j])


def tanh_backward(double[:, ::1] dA, double[:, ::1] A, double[:, ::1] out):
    """out = dA * (1 - A**2), where A = tanh(Z) from the forward pass.

    out may alias dA or A (elementwise read-before-write)."""
    if not (dA.shape[0] == A.shape[0] == out.shape[0] and dA.shape[1] == A.shape[1] == out.shape[1]):
        raise ValueError("tanh_backward: shape mismatch")
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                out[i, j] = dA[i, j] * (1.0 - A[i, j] * A[i, j])


def linear_backward(double[:, ::1] dY, double[:, ::1] X, double[:, ::1] W,
                    double[:, ::1] dW, double[::1] db, dX=None):
    """Gradients of Y = X @ W + b: dW = X.T @ dY, db = column sums of dY,
    and (when dX is given) dX = dY @ W.T."""
    cdef int rows = X.shape[0], din = X.shape[1], dout = dY.shape[1]
    if (dY.shape[0] != rows or W.shape[0] != din or W.shape[1] != dout
            or dW.shape[0] != din or dW.shape[1] != dout or db.shape[0] != dout):
        raise ValueError("linear_backward: shape mismatch")
    cdef double[:, ::1] dXv
    cdef Py_ssize_t i, j
    with nogil:
        # dW = X^T @ dY
        _gemm(c'T', c'N', din, dout, rows, &X[0, 0], din, &dY[0, 0], dout, 0.0, &dW[0, 0], dout)
        for j in range(dout):
            db[j] = 0.0
        for i in range(rows):
            for j in range(dout):
                db[j] += dY[i, j]
    if dX is not None:
        dXv = dX
        if dXv.shape[0] != rows or dXv.shape[1] != din:
            raise ValueError("linear_backward: dX shape mismatch")
        with nogil:
            # dX = dY @ W^T
            _gemm(c'N', c'T', rows, din, dout, &dY[0, 0], dout, &W[0, 0], dout, 0.0, &dXv[0, 0], din)
    return None


def linear_backward_input(double[:, ::1] dY, double[:, ::1] W, double[:, ::1] dX):
    """Input gradient only: dX = dY @ W.T (skips the parameter gradients)."""
    cdef int rows = dY.shape[0], dout = dY.shape[1], din = W.shape[0]
    if W.shape[1] != dout or dX.shape[0] != rows or dX.shape[1] != din:
        raise ValueError("linear_backward_input: shape mismatch")
    with nogil:
        _gemm(c'N', c'T', rows, din, dout, &dY[0, 0], dout, &W[0, 0], dout, 0.0, &dX[0, 0], din)
