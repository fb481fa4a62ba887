"""Small dense linear-algebra helpers shared across modules.

``expm`` is a batched scaling-and-squaring exponential with a fixed
degree-13 Padé approximant (Higham 2005 coefficients).  It works on
stacks of matrices so that kernels ``x**H`` can be evaluated on whole
quadrature or time grids at once.
"""

import numpy as np

from .exceptions import OverflowDomain, ValidationError

_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152
# exp overflows float64 past ~709; norms beyond this are unrecoverable
_MAX_NORM = 700.0


def expm(A):
    """Matrix exponential of a square matrix or a stack ``(..., d, d)``."""
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValidationError(f"expm needs square matrices, got shape {A.shape}")
    dtype = np.result_type(A.dtype, np.float64)
    batch_shape = A.shape[:-2]
    d = A.shape[-1]
    A = A.reshape((-1, d, d)).astype(dtype, copy=True)

    norms = np.abs(A).sum(axis=-2).max(axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(norms > _MAX_NORM * d):
        raise OverflowDomain("matrix exponential argument too large")
    with np.errstate(divide="ignore"):
        s = np.where(norms > _THETA13, np.ceil(np.log2(norms / _THETA13)), 0.0)
    s = s.astype(int)
    A = A / (2.0 ** s)[:, None, None]

    b = _PADE13
    eye = np.broadcast_to(np.eye(d, dtype=dtype), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye)
    X = np.linalg.solve(V - U, V + U)
    # exact identity for zero arguments (t = 1, or a vanishing generator)
    X[norms == 0] = np.eye(d, dtype=dtype)

    for k in range(int(s.max(initial=0))):
        todo = s > k
        X[todo] = X[todo] @ X[todo]

    if not np.all(np.isfinite(X)):
        raise OverflowDomain("matrix exponential overflowed")
    return X.reshape(batch_shape + (d, d))


def sym_sqrt(M, tol=1e-12):
    """Symmetric square root of a PSD matrix.

    Eigenvalues in ``[-tol * scale, 0)`` are clamped to zero; anything more
    negative means the input is not PSD.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(M)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol * scale * 1e3:
        raise ValidationError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (Q * np.sqrt(w)) @ Q.T


def is_psd(M, tol=1e-10):
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=tol, rtol=0):
        return False
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    return bool(w.min(initial=0.0) >= -tol * scale)


def as_square(raw, name="matrix"):
    M = np.asarray(raw, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M
