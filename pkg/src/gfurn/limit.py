"""Gaussian limit processes.

``S`` solves ``S_t = W_t + int_0^t S_s H~ / s ds`` (Equ1, started at 0) or
the same equation on ``[1, T]`` started at ``S_1 = 0`` with driver
``W_t - W_1`` (Equ2).  Both are simulated with the exact-in-structure
update

    S(t_{j+1}) = S(t_j) (t_{j+1}/t_j)^H~ + dW_j (t_{j+1}/x_j*)^H~

where ``x_j*`` is the panel midpoint.  Paths are row vectors, matching the
urn's convention ``Y H``.

Ensembles are simulated in fixed-size blocks of paths.  Block ``b`` of
channel ``c`` draws from the stream keyed ``(seed, b, c)``, so ensembles
do not depend on the thread count.
"""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import propagate_chunk
from ._linalg import expm, sym_sqrt
from .exceptions import (
    BadGrid,
    CriticalRegime,
    DriverMissing,
    GridMismatch,
    InsufficientPaths,
    SupercriticalUnsupported,
    ValidationError,
)
from .spectral import SUBCRITICAL, SUPERCRITICAL
from .streams import make_stream

EQU1 = "equ1"
EQU2 = "equ2"
BLOCK_PATHS = 1024
_STEP_CHUNK = 256


@dataclass
class LimitPath:
    grid: np.ndarray
    values: np.ndarray
    running_integral: np.ndarray
    driver: np.ndarray = None
    equation: str = EQU1

    @property
    def dim(self):
        return self.values.shape[1]

    def at(self, t):
        j = _grid_index(self.grid, [t])[0]
        return self.values[j]

    def to_csv(self, fh=None):
        d = self.dim
        out = fh or io.StringIO()
        cols = ["t"] + [f"S_{k + 1}" for k in range(d)] + [f"I_{k + 1}" for k in range(d)]
        out.write(",".join(cols) + "\n")
        for t, s, i in zip(self.grid, self.values, self.running_integral):
            out.write(",".join(repr(float(x)) for x in (t, *s, *i)) + "\n")
        return out.getvalue() if fh is None else None


# ---------------------------------------------------------------------------
# grids

def first_panel_width(rho, rel=1e-6, floor=1e-250):
    """Width of ``[0, t_1]`` whose contribution ``~ t_1**(1/2 - rho)`` is below ``rel``."""
    gap = 0.5 - rho
    if gap <= 0:
        raise CriticalRegime("Equ1 needs rho < 1/2")
    return max(floor, min(1e-6, rel ** (1.0 / gap)))


def hybrid_grid(n_steps, T=1.0, t_min=1e-12):
    """``0`` followed by ``n_steps`` log-uniform points from ``t_min`` to ``T``."""
    if n_steps < 1 or not 0 < t_min < T:
        raise BadGrid("need n_steps >= 1 and 0 < t_min < T")
    return np.concatenate([[0.0], np.geomspace(t_min, T, n_steps)])


def geometric_grid(n_steps, T, start=1.0):
    """``n_steps + 1`` log-uniform points from ``start`` to ``T``."""
    if n_steps < 1 or not 0 < start < T:
        raise BadGrid("need n_steps >= 1 and 0 < start < T")
    return np.geomspace(start, T, n_steps + 1)


def integer_grid(T, refine=8, start=1):
    """Grid on ``[start, T]`` containing every integer, each unit split ``refine`` ways."""
    T = int(T)
    if T <= start or refine < 1:
        raise BadGrid("need T > start and refine >= 1")
    return start + np.arange((T - start) * refine + 1) / refine


def refine_grid(grid, factor):
    """Split each panel ``factor`` ways; the panel at 0 is split uniformly, others geometrically."""
    grid = np.asarray(grid, dtype=float)
    pieces = []
    for a, b in zip(grid[:-1], grid[1:]):
        if a == 0.0:
            pieces.append(np.linspace(a, b, factor + 1)[:-1])
        else:
            pieces.append(np.geomspace(a, b, factor + 1)[:-1])
    pieces.append(grid[-1:])
    return np.concatenate(pieces)


def coarsen_driver(driver, factor):
    """Sum consecutive groups of ``factor`` increments (matches :func:`refine_grid`)."""
    driver = np.asarray(driver)
    return driver.reshape(-1, factor, driver.shape[-1]).sum(axis=1)


def _check_grid(grid, equation):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise BadGrid("grid must be strictly increasing with at least two points")
    if equation == EQU1 and grid[0] != 0.0:
        raise BadGrid("Equ1 grids start at 0")
    if equation == EQU2 and grid[0] != 1.0:
        raise BadGrid("Equ2 grids start at 1")
    return grid


def _grid_index(grid, times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    j = np.clip(np.searchsorted(grid, times), 0, grid.size - 1)
    lo = np.clip(j - 1, 0, grid.size - 1)
    j = np.where(np.abs(grid[lo] - times) < np.abs(grid[j] - times), lo, j)
    if np.any(np.abs(grid[j] - times) > 1e-12 * np.maximum(1.0, np.abs(times))):
        raise BadGrid(f"times {times.tolist()} are not all grid points")
    return j


def _step_kernels(Ht, grid):
    """``(t_{j+1}/t_j)^H~`` and ``(t_{j+1}/x_j*)^H~`` for every panel."""
    t0, t1 = grid[:-1], grid[1:]
    mid = 0.5 * (t0 + t1)
    with np.errstate(divide="ignore"):
        log_prop = np.where(t0 > 0, np.log(t1 / np.where(t0 > 0, t0, 1.0)), 0.0)
    A = expm(log_prop[:, None, None] * Ht)
    # S(0) = 0, so the propagator on the first Equ1 panel is never used
    A[t0 == 0] = 0.0
    B = expm(np.log(t1 / mid)[:, None, None] * Ht)
    return A, B


def _regime_check(S, equation):
    if S.regime == SUPERCRITICAL:
        raise SupercriticalUnsupported("no limit process for rho > 1/2")
    if equation == EQU1 and S.regime != SUBCRITICAL:
        raise CriticalRegime("Equ1 needs rho < 1/2; use simulate_equ2")


# ---------------------------------------------------------------------------
# single paths

def _simulate_path(S, cov, grid, stream, driver, equation):
    _regime_check(S, equation)
    grid = _check_grid(grid, equation)
    d = S.dim
    M = grid.size - 1
    if driver is None:
        root = sym_sqrt(np.asarray(cov, dtype=float))
        rng = make_stream(stream)
        z = rng.standard_normal((M, d))
        driver = np.sqrt(np.diff(grid))[:, None] * (z @ root)
    else:
        driver = np.asarray(driver, dtype=float)
        if driver.shape != (M, d):
            raise GridMismatch(f"driver shape {driver.shape} does not match {(M, d)}")
    A, B = _step_kernels(S.h_tilde, grid)
    values = np.zeros((M + 1, d))
    for j in range(M):
        values[j + 1] = values[j] @ A[j] + driver[j] @ B[j]
    return LimitPath(grid=grid, values=values, running_integral=_running_integral(grid, values),
                     driver=driver, equation=equation)


def simulate_equ1(S, cov, grid, stream, driver=None):
    """One path of the Equ1 solution; ``stream`` is a seed or Generator."""
    return _simulate_path(S, cov, grid, stream, driver, EQU1)


def simulate_equ2(S, cov, grid, stream, driver=None):
    """One path of the Equ2 solution on a grid starting at 1."""
    return _simulate_path(S, cov, grid, stream, driver, EQU2)


def _running_integral(grid, values):
    """Trapezoid on ``S/x``; a panel starting at 0 contributes nothing."""
    t0, t1 = grid[:-1], grid[1:]
    f = np.zeros_like(values)
    pos = grid > 0
    f[pos] = values[pos] / grid[pos, None]
    panel = 0.5 * (t1 - t0)[:, None] * (f[:-1] + f[1:])
    panel[t0 == 0] = 0.0
    return np.concatenate([np.zeros((1, values.shape[1])), np.cumsum(panel, axis=0)])


def sde_residual(path, S):
    """Max grid norm of ``S(t) - (W(t) - W(t_0)) - int S H~ / s ds``."""
    if path.driver is None:
        raise DriverMissing("path was produced without its driver")
    W = np.concatenate([np.zeros((1, path.dim)), np.cumsum(path.driver, axis=0)])
    drift = _running_integral(path.grid, path.values) @ S.h_tilde
    return float(np.abs(path.values - W - drift).max())


def critical_identity_residual(G1, G2, S):
    """Max grid norm of ``n_limit H - (y_limit - B_2)`` for Equ2 paths on a shared grid.

    ``B_2`` is the driver of ``G2`` restarted at 1, i.e. ``W_t - W_1``.
    """
    y, n = composite_paths(G1, G2, S)
    if G2.driver is None:
        raise DriverMissing("G2 was produced without its driver")
    B2 = np.concatenate([np.zeros((1, S.dim)), np.cumsum(G2.driver, axis=0)])
    return float(np.abs(n @ S.H - (y - B2)).max())


def composite_paths(G1, G2, S):
    """``(y_limit, n_limit) = (G1 H + G2, G1 + int G2/x dx (I - 1'v))`` on the shared grid."""
    if G1.grid.shape != G2.grid.shape or np.any(G1.grid != G2.grid):
        raise GridMismatch("G1 and G2 must share a grid")
    d = S.dim
    Ipv = np.eye(d) - np.outer(np.ones(d), S.v)
    y = G1.values @ S.H + G2.values
    n = G1.values + G2.running_integral @ Ipv
    return y, n


# ---------------------------------------------------------------------------
# ensembles

def low_rank_root(cov, tol=1e-12):
    """``r x d`` matrix ``F`` with ``F' F = cov``, keeping only non-null directions.

    Drawing ``r = rank(cov)`` normals per step instead of ``d`` halves the
    cost for the rank-one drivers of two-color rules.
    """
    cov = np.asarray(cov, dtype=float)
    sym_sqrt(cov, tol)  # PSD validation
    w, U = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(float(np.abs(w).max()), 1e-300)
    keep = w > tol * scale
    return np.ascontiguousarray((U[:, keep] * np.sqrt(w[keep])).T)


def _propagate_block(A, B, root, dt_sqrt, n_paths, rng, rec_idx, grid):
    """Advance ``n_paths`` paths and keep ``(S, running integral)`` at ``rec_idx``."""
    d = A.shape[1]
    M = A.shape[0]
    S = np.zeros((n_paths, d))
    I = np.zeros((n_paths, d))
    f_prev = np.zeros((n_paths, d))
    rec_S = np.zeros((len(rec_idx), n_paths, d))
    rec_I = np.zeros((len(rec_idx), n_paths, d))
    slot = np.full(M + 1, -1, dtype=np.int64)
    slot[np.asarray(rec_idx)] = np.arange(len(rec_idx))
    if root.shape[0] == 0:
        return rec_S, rec_I
    for c0 in range(0, M, _STEP_CHUNK):
        c1 = min(M, c0 + _STEP_CHUNK)
        Z = rng.standard_normal((c1 - c0, n_paths, root.shape[0]))
        propagate_chunk(S, I, f_prev, Z, root, A, B, dt_sqrt, grid, c0, slot, rec_S, rec_I)
    return rec_S, rec_I


def simulate_ensemble(S, cov, grid, n_paths, seed, times, channel=0, equation=EQU1, threads=1):
    """Values and running integrals of ``n_paths`` paths at the grid points ``times``.

    Returns two arrays of shape ``(len(times), n_paths, d)``.
    """
    _regime_check(S, equation)
    grid = _check_grid(grid, equation)
    rec_idx = _grid_index(grid, times)
    if np.any(rec_idx == 0):
        raise BadGrid("record times must be after the grid start")
    root = low_rank_root(cov)
    A, B = _step_kernels(S.h_tilde, grid)
    dt_sqrt = np.sqrt(np.diff(grid))
    blocks = [(b, min(BLOCK_PATHS, n_paths - b * BLOCK_PATHS))
              for b in range(math.ceil(n_paths / BLOCK_PATHS))]

    def work(item):
        b, size = item
        rng = make_stream(seed, b, channel)
        return _propagate_block(A, B, root, dt_sqrt, size, rng, rec_idx, grid)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(item) for item in blocks]
    vals = np.concatenate([p[0] for p in parts], axis=1)
    ints = np.concatenate([p[1] for p in parts], axis=1)
    return vals, ints


def composite_ensemble(S, noise, grid, n_paths, seed, times, equation=EQU1, threads=1,
                       return_parts=False):
    """Stacked ``(y_limit, n_limit)`` samples at ``times``: array ``(len(times), n_paths, 2d)``.

    ``G1`` is driven by ``Sigma_1`` (channel 0) and ``G2`` by ``Sigma_2``
    (channel 1).  With ``return_parts`` the raw ``G1``, ``G2`` and
    ``int G2/x dx`` samples are returned as well.
    """
    g1, _ = simulate_ensemble(S, noise.sigma1, grid, n_paths, seed, times, 0, equation, threads)
    g2, i2 = simulate_ensemble(S, noise.sigma2, grid, n_paths, seed, times, 1, equation, threads)
    d = S.dim
    Ipv = np.eye(d) - np.outer(np.ones(d), S.v)
    y = g1 @ S.H + g2
    n = g1 + i2 @ Ipv
    stacked = np.concatenate([y, n], axis=-1)
    if return_parts:
        return stacked, g1, g2, i2
    return stacked


@dataclass(frozen=True)
class EnsembleStats:
    n_paths: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.cov) / self.n_paths)


def ensemble_stats(paths, t=None):
    """Sample mean and unbiased covariance of stacked values at time ``t``.

    ``paths`` is an array ``(n_paths, k)``, a list of :class:`LimitPath`, or
    a list of ``(y, n)`` composite pairs (arrays over the grid, with ``t``
    given as a grid index).
    """
    if isinstance(paths, np.ndarray):
        X = np.atleast_2d(paths)
    else:
        rows = []
        for p in paths:
            if isinstance(p, LimitPath):
                rows.append(p.at(t))
            else:
                y, n = p
                rows.append(np.concatenate([y[t], n[t]]))
        X = np.array(rows, dtype=float)
    if X.shape[0] < 2:
        raise InsufficientPaths("need at least two paths")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite path values")
    mean = X.mean(axis=0)
    C = X - mean
    cov = C.T @ C / (X.shape[0] - 1)
    return EnsembleStats(n_paths=X.shape[0], mean=mean, cov=0.5 * (cov + cov.T))
