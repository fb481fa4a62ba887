"""Generating-matrix validation and spectral analysis.

Everything downstream (limit processes, covariances, the martingale
decomposition) consumes a :class:`SpectralData` built here: the stationary
row vector ``v``, the non-Perron eigenvalues, the exponent ``rho`` and
Jordan order ``nu`` of the dominant ones, and the fluctuation generator
``h_tilde = H - 1'v``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import as_square, expm
from .exceptions import (
    AmbiguousNu,
    NegativeOffDiagonal,
    NonConstantRowSums,
    NonSimplePerronRoot,
    OverflowDomain,
    SupercriticalUnsupported,
    ValidationError,
)

SUBCRITICAL = "subcritical"
CRITICAL = "critical"
SUPERCRITICAL = "supercritical"

# Numerically computed eigenvalues of a Jordan block of order k split by
# about eps**(1/k); clustering below this width treats them as repeated.
_MULTIPLICITY_TOL = 1e-5


@dataclass(frozen=True)
class GeneratingMatrix:
    """Mean replacement matrix normalized to unit row sums.

    ``entries`` is ``raw / row_sum_s``.
    """

    entries: np.ndarray
    row_sum_s: float

    @property
    def dim(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class SpectralData:
    H: np.ndarray
    v: np.ndarray
    eigenvalues: np.ndarray
    rho: float
    nu: int
    h_tilde: np.ndarray
    regime: str
    critical_pairs: list = field(default_factory=list)
    row_sum_s: float = 1.0
    eig_tol: float = 1e-9

    @property
    def dim(self):
        return self.H.shape[0]

    def to_dict(self):
        return {
            "dim": int(self.dim),
            "row_sum_s": float(self.row_sum_s),
            "H": self.H.tolist(),
            "v": self.v.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "rho": float(self.rho),
            "nu": int(self.nu),
            "regime": self.regime,
            "h_tilde": self.h_tilde.tolist(),
            "critical_eigenvectors": [
                {
                    "eigenvalue": [float(lam.real), float(lam.imag)],
                    "vector_real": vec.real.tolist(),
                    "vector_imag": vec.imag.tolist(),
                }
                for lam, vec in self.critical_pairs
            ],
        }


def validate_generating_matrix(raw, tol=1e-12):
    """Check the common-row-sum and off-diagonal sign conditions, then normalize.

    Parameters
    ----------
    raw : array_like, shape (d, d)
        Mean replacement matrix with a common positive row sum ``s``.
    tol : float
        Absolute tolerance on row-sum spread and on negative off-diagonals.

    Returns
    -------
    GeneratingMatrix
    """
    H = as_square(raw, "generating matrix")
    d = H.shape[0]
    if d < 2:
        raise ValidationError("generating matrix must have dimension d >= 2")
    sums = H.sum(axis=1)
    if sums.max() - sums.min() > tol * max(1.0, abs(sums).max()):
        raise NonConstantRowSums(f"row sums differ: {sums.tolist()}")
    s = float(sums.mean())
    if not s > 0:
        raise NonConstantRowSums(f"common row sum must be positive, got {s}")
    off = H[~np.eye(d, dtype=bool)]
    if off.min() < -tol:
        raise NegativeOffDiagonal(f"negative off-diagonal entry {off.min():.3e}")
    return GeneratingMatrix(entries=H / s, row_sum_s=s)


def _unit_phase(vec):
    """Unit Euclidean norm, first non-negligible component real positive."""
    vec = np.asarray(vec, dtype=complex)
    vec = vec / np.linalg.norm(vec)
    k = int(np.argmax(np.abs(vec) > 1e-12))
    return vec * (abs(vec[k]) / vec[k])


def _null_dim(M, tol):
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv <= tol * max(1.0, sv[0])))


def _left_perron_vector(H, eig_tol):
    w, vl = np.linalg.eig(H.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    v = np.real(vl[:, k])
    v = v / v.sum()
    d = H.shape[0]
    # one least-squares polish of vH = v, v1' = 1
    A = np.vstack([(H - np.eye(d)).T, np.ones((1, d))])
    rhs = np.concatenate([np.zeros(d), [1.0]])
    v_ls, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.linalg.norm(A @ v_ls - rhs) <= np.linalg.norm(A @ v - rhs):
        v = v_ls
    if v.min() < -eig_tol:
        raise ValidationError(f"left Perron vector has a negative component ({v.min():.3e})")
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def _clusters(values, tol):
    """Group (complex) values whose pairwise distance chains stay below tol."""
    groups = []
    for z in values:
        for g in groups:
            if min(abs(z - y) for y in g) <= tol:
                g.append(z)
                break
        else:
            groups.append([z])
    return groups


def spectral_analyze(G, eig_tol=1e-9, nu_override=None, allow_supercritical=False):
    """Extract ``v``, ``rho``, ``nu``, ``h_tilde`` and the regime of ``G``.

    ``G`` may be a :class:`GeneratingMatrix` or a raw matrix (validated
    first).  ``nu`` is 1 when every eigenvalue attaining ``rho`` is
    semisimple; repeated eigenvalues with a Jordan defect need
    ``nu_override``.
    """
    if not isinstance(G, GeneratingMatrix):
        G = validate_generating_matrix(G)
    H = G.entries
    d = G.dim
    mult_tol = max(eig_tol, _MULTIPLICITY_TOL)

    lam = np.linalg.eigvals(H)
    near_one = np.abs(lam - 1.0) <= mult_tol
    if near_one.sum() != 1:
        raise NonSimplePerronRoot(
            f"eigenvalue 1 has multiplicity {int(near_one.sum())} (within {mult_tol:g})"
        )
    perron = int(np.flatnonzero(near_one)[0])
    others = np.delete(lam, perron)
    # order: real part descending, then imaginary part
    others = others[np.lexsort((others.imag, -others.real))]
    eigenvalues = np.concatenate([[1.0 + 0j], others])

    rho = float(others.real.max())
    top = others[others.real >= rho - mult_tol]
    nu = 1
    crit_basis = []
    for g in _clusters(list(top), mult_tol):
        center = complex(np.mean(g))
        M = H - center * np.eye(d)
        geo = _null_dim(M, 1e-7)
        if len(g) > 1 and geo < len(g):
            if nu_override is None:
                raise AmbiguousNu(
                    f"eigenvalue {center:.6g} attaining rho is repeated ({len(g)}x) with "
                    f"geometric multiplicity {geo}; supply nu_override"
                )
            nu = int(nu_override)
        crit_basis.append((center, len(g)))
    if nu_override is not None:
        nu = int(nu_override)
    if nu < 1:
        raise ValidationError("nu must be a positive integer")

    if abs(rho - 0.5) <= eig_tol:
        regime = CRITICAL
        if rho != 0.5:
            warnings.warn(f"rho={rho!r} within eig_tol of 1/2; classified as critical", stacklevel=2)
    elif rho < 0.5:
        regime = SUBCRITICAL
    else:
        regime = SUPERCRITICAL
        if not allow_supercritical:
            raise SupercriticalUnsupported(f"rho={rho:.6g} > 1/2: no Gaussian covariance theory")

    v = _left_perron_vector(H, eig_tol)
    h_tilde = H - np.outer(np.ones(d), v)

    critical_pairs = []
    if regime == CRITICAL:
        for center, mult in crit_basis:
            M = H - center * np.eye(d)
            _, sv, vh = np.linalg.svd(M)
            basis = vh.conj()[d - mult:]
            for vec in basis:
                critical_pairs.append((center, _unit_phase(vec)))

    return SpectralData(
        H=H,
        v=v,
        eigenvalues=eigenvalues,
        rho=rho,
        nu=nu,
        h_tilde=h_tilde,
        regime=regime,
        critical_pairs=critical_pairs,
        row_sum_s=G.row_sum_s,
        eig_tol=eig_tol,
    )


def matrix_power(S, t):
    """``t ** h_tilde = exp(h_tilde * ln t)`` for scalar or array ``t > 0``.

    Accepts a :class:`SpectralData` or a bare generator matrix.  Array input
    returns a stack with shape ``t.shape + (d, d)``.
    """
    Ht = S.h_tilde if isinstance(S, SpectralData) else np.asarray(S, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValidationError("matrix_power needs t > 0")
    logs = np.log(t)
    try:
        return expm(logs[..., None, None] * Ht)
    except OverflowDomain:
        raise OverflowDomain(f"t**H overflows for t in [{t.min():.3g}, {t.max():.3g}]") from None


def growth_profile(S, exponents=range(1, 21)):
    """Norms ``||a**h_tilde||`` on ``a = 2**k`` and their ratio to ``a**rho log**(nu-1) a``."""
    a = 2.0 ** np.asarray(list(exponents), dtype=float)
    P = matrix_power(S, a)
    norms = np.linalg.norm(P, ord=2, axis=(-2, -1))
    logs = np.log(np.maximum(a, math.e))
    ratio = norms / (a ** S.rho * logs ** (S.nu - 1))
    return a, norms, ratio
