"""Urn recursion ``Y_m = Y_{m-1} + X_m D_m`` and its martingale decomposition.

Single trajectories keep a full draw log (drawn color, applied row of
``D_m`` and, for history-dependent rules, the snapshot of ``H_m``) from
which every state can be replayed exactly.  Replicated experiments use
:func:`simulate_endpoints`, which keeps only states at requested horizons.
"""

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import (
    AllMassLost,
    InsufficientReplicates,
    MissingLog,
    NonpositiveInitialCount,
    ValidationError,
)
from .rules import FiniteRule
from .streams import make_stream

TRAJECTORY_FORMAT_VERSION = 1
_CHUNK = 1 << 16


def _seq_sum(y):
    a = 0.0
    for x in y:
        a += float(x)
    return a


@dataclass
class UrnState:
    """Urn contents after ``m`` stages.

    ``rng`` is shared with successor states returned by :func:`step`, so a
    chain of states consumes one stream.
    """

    Y: np.ndarray
    N: np.ndarray
    m: int
    rng: np.random.Generator
    rule: object
    last: tuple = None

    @property
    def a(self):
        return _seq_sum(self.Y)

    @property
    def dim(self):
        return self.Y.size


def init_urn(Y0, rule, seed):
    Y0 = np.atleast_1d(np.asarray(Y0, dtype=float)).copy()
    if Y0.size != rule.dim:
        raise ValidationError(f"Y0 has {Y0.size} colors but the rule has {rule.dim}")
    if not np.all(Y0 > 0):
        raise NonpositiveInitialCount(f"initial counts must be positive, got {Y0.tolist()}")
    return UrnState(Y=Y0, N=np.zeros(Y0.size, dtype=np.int64), m=0, rng=make_stream(seed), rule=rule)


def _draw(Y, a, u):
    target = u * a
    acc = 0.0
    for k, y in enumerate(Y):
        acc += float(y)
        if target < acc:
            return k
    return Y.size - 1


def step(state, forced_type=None):
    """One draw-and-replace stage.  ``forced_type`` overrides the sampled color."""
    a = state.a
    if not a > 0:
        raise AllMassLost(f"urn total {a} at stage {state.m}")
    u = state.rng.random()
    K = _draw(state.Y, a, u) if forced_type is None else int(forced_type)
    Hm = state.rule.conditional_mean(state)
    D = state.rule.sample_D(state, K, state.rng)
    N = state.N.copy()
    N[K] += 1
    return UrnState(Y=state.Y + D[K], N=N, m=state.m + 1, rng=state.rng,
                    rule=state.rule, last=(K, D[K].copy(), Hm))


@dataclass
class Trajectory:
    """Draw log of ``n`` stages started from ``(Y0, N0, m0)``.

    States are replayed from the log; ``ck_*`` hold the checkpointed states
    (every ``stride``-th stage plus the last one).
    """

    Y0: np.ndarray
    draws: np.ndarray
    rows: np.ndarray
    H: np.ndarray
    V: np.ndarray
    H_snapshots: np.ndarray = None
    N0: np.ndarray = None
    m0: int = 0
    stride: int = 1
    ck_steps: np.ndarray = None
    ck_Y: np.ndarray = None
    ck_N: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.N0 is None:
            self.N0 = np.zeros(self.Y0.size, dtype=np.int64)
        if self.ck_steps is None and self.draws is not None:
            self._store_checkpoints()

    @property
    def n(self):
        return 0 if self.draws is None else int(self.draws.size)

    @property
    def dim(self):
        return self.Y0.size

    def _require_log(self):
        if self.draws is None or self.rows is None:
            raise MissingLog("trajectory has no draw log")

    @property
    def Y(self):
        """All states ``Y_0..Y_n``, shape ``(n + 1, d)``."""
        self._require_log()
        return np.cumsum(np.vstack([self.Y0[None, :], self.rows]), axis=0)

    @property
    def X(self):
        self._require_log()
        X = np.zeros((self.n, self.dim))
        X[np.arange(self.n), self.draws] = 1.0
        return X

    @property
    def N(self):
        self._require_log()
        return np.vstack([self.N0[None, :], self.N0 + np.cumsum(self.X, axis=0).astype(np.int64)])

    @property
    def a(self):
        Y = self.Y
        a = np.zeros(Y.shape[0])
        for k in range(self.dim):
            a += Y[:, k]
        return a

    @property
    def Hm(self):
        """Generating matrices ``H_1..H_n`` used at each stage, shape ``(n, d, d)``."""
        if self.H_snapshots is not None:
            return self.H_snapshots
        return np.broadcast_to(self.H, (self.n, self.dim, self.dim))

    def final(self):
        if self.n == 0:
            return self.Y0.copy(), self.N0.copy()
        return self.Y[-1], self.N[-1]

    def _store_checkpoints(self):
        steps = np.arange(0, self.n + 1, self.stride)
        if steps[-1] != self.n:
            steps = np.append(steps, self.n)
        self.ck_steps = steps
        self.ck_Y = self.Y[steps]
        self.ck_N = self.N[steps]

    def replay_matches_checkpoints(self):
        return bool(np.array_equal(self.Y[self.ck_steps], self.ck_Y)
                    and np.array_equal(self.N[self.ck_steps], self.ck_N))

    # serialization -----------------------------------------------------
    def save(self, path):
        self._require_log()
        np.savez_compressed(
            path,
            format_version=TRAJECTORY_FORMAT_VERSION,
            Y0=self.Y0, N0=self.N0, m0=self.m0, draws=self.draws, rows=self.rows,
            H=self.H, V=self.V, stride=self.stride,
            H_snapshots=self.H_snapshots if self.H_snapshots is not None else np.zeros(0),
            ck_steps=self.ck_steps, ck_Y=self.ck_Y, ck_N=self.ck_N,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            version = int(z["format_version"])
            if version != TRAJECTORY_FORMAT_VERSION:
                raise ValidationError(f"unsupported trajectory format version {version}")
            snaps = z["H_snapshots"]
            return cls(
                Y0=z["Y0"], draws=z["draws"], rows=z["rows"], H=z["H"], V=z["V"],
                H_snapshots=snaps if snaps.size else None, N0=z["N0"], m0=int(z["m0"]),
                stride=int(z["stride"]), ck_steps=z["ck_steps"], ck_Y=z["ck_Y"], ck_N=z["ck_N"],
            )

    def to_csv(self, fh=None):
        """Columns ``m, drawn_type, D_1..D_d, Y_1..Y_d, N_1..N_d, a`` (colors 1-based)."""
        self._require_log()
        d = self.dim
        Y, N, a = self.Y, self.N, self.a
        header = (["m", "drawn_type"] + [f"D_{k + 1}" for k in range(d)]
                  + [f"Y_{k + 1}" for k in range(d)] + [f"N_{k + 1}" for k in range(d)] + ["a"])
        out = fh if fh is not None else io.StringIO()
        out.write(",".join(header) + "\n")
        out.write(",".join(["0", ""] + [""] * d + [repr(float(y)) for y in Y[0]]
                           + [str(int(x)) for x in N[0]] + [repr(float(a[0]))]) + "\n")
        for j in range(self.n):
            fields = ([str(self.m0 + j + 1), str(int(self.draws[j]) + 1)]
                      + [repr(float(x)) for x in self.rows[j]]
                      + [repr(float(y)) for y in Y[j + 1]]
                      + [str(int(x)) for x in N[j + 1]] + [repr(float(a[j + 1]))])
            out.write(",".join(fields) + "\n")
        return out.getvalue() if fh is None else None


def _default_stride(n):
    return 1 if n < 100_000 else 64


def run(state, n, stride=None):
    """Advance ``state`` by ``n`` stages and return the logged :class:`Trajectory`.

    Finite-support rules go through the compiled kernel; other rules use
    :func:`step`.  Both consume the stream identically.
    """
    n = int(n)
    if n < 0:
        raise ValidationError("n must be >= 0")
    rule = state.rule
    d = state.dim
    Y0 = state.Y.copy()
    N0 = state.N.copy()
    m0 = state.m
    stride = _default_stride(n) if stride is None else int(stride)

    if isinstance(rule, FiniteRule):
        support, cum, sizes = rule.tables()
        Y = state.Y.copy()
        N = state.N.copy()
        draws = np.empty(n, dtype=np.int64)
        rows = np.empty((n, d))
        done = 0
        while done < n:
            k = min(_CHUNK, n - done)
            u = state.rng.random((k, 1 + d))
            got = _kernels.advance(Y, N, u, support, cum, sizes,
                                   draws[done:done + k], rows[done:done + k], True)
            if got < k:
                raise AllMassLost(f"urn emptied at stage {m0 + done + got}")
            done += k
        snaps = None
        state.Y, state.N, state.m = Y, N, m0 + n
    else:
        draws = np.empty(n, dtype=np.int64)
        rows = np.empty((n, d))
        snaps = np.empty((n, d, d))
        cur = state
        for j in range(n):
            cur = step(cur)
            draws[j], rows[j], snaps[j] = cur.last
        state.Y, state.N, state.m = cur.Y, cur.N, cur.m
    return Trajectory(Y0=Y0, draws=draws, rows=rows, H=np.asarray(rule.H, dtype=float),
                      V=np.asarray(rule.V, dtype=float), H_snapshots=snaps, N0=N0, m0=m0,
                      stride=stride)


def simulate(rule, Y0, n, seed, stride=None):
    """Convenience: ``run(init_urn(Y0, rule, seed), n)``."""
    return run(init_urn(Y0, rule, seed), n, stride=stride)


def martingale_tracks(traj):
    """Paths ``M_1`` (draw noise) and ``M_2`` (addition noise), each ``(n + 1, d)``."""
    traj._require_log()
    Y = traj.Y
    a = traj.a
    p = Y[:-1] / a[:-1, None]
    dM1 = traj.X - p
    dM2 = traj.rows - traj.Hm[np.arange(traj.n), traj.draws]
    zero = np.zeros((1, traj.dim))
    return (np.vstack([zero, np.cumsum(dM1, axis=0)]),
            np.vstack([zero, np.cumsum(dM2, axis=0)]))


@dataclass
class DecompositionResiduals:
    y_residual: float
    n_residual: float
    y_path: np.ndarray = None
    n_path: np.ndarray = None


def _prefix(x):
    """``out[n] = sum_{m < n} x[m]`` with ``out[0] = 0``."""
    return np.vstack([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])


def decompose(traj, S, keep_paths=False):
    """Check the exact martingale expansions of ``Y_n - n v`` and ``N_n - n v``.

    Works on the normalized scale (counts and replacement rows divided by
    the common row sum ``s``).  Returns the maximum absolute residual of
    each identity over ``n = 1..len(traj)``.
    """
    traj._require_log()
    if traj.m0 != 0 or np.any(traj.N0 != 0):
        raise ValidationError("decompose needs a trajectory started at stage 0")
    n = traj.n
    if n == 0:
        return DecompositionResiduals(0.0, 0.0)
    s = S.row_sum_s
    d = traj.dim
    H = S.H
    Ht = S.h_tilde
    v = S.v
    Ipv = np.eye(d) - np.outer(np.ones(d), v)

    Y = traj.Y / s                        # Y_0..Y_n
    a = traj.a / s
    X = traj.X
    rows = traj.rows / s
    Hm = traj.Hm / s
    Hdrawn = Hm[np.arange(n), traj.draws]

    M1 = _prefix(X - Y[:-1] / a[:-1, None])          # M_{n1}, n = 0..N
    M2 = _prefix(rows - Hdrawn)
    drift = _prefix(Hdrawn - X @ H)                  # sum_{m<=n} X_m (H_m - H)

    m = np.arange(1, n, dtype=float)                 # 1..n-1
    centered = (Y[1:n] - m[:, None] * v) / m[:, None]
    corr = ((m - a[1:n]) / m)[:, None] * (Y[1:n] / a[1:n, None] - v)
    # index k of these prefixes = sum over m = 1..k-1
    S_ht = np.vstack([np.zeros((1, d)), _prefix(centered @ Ht)])
    S_ipv = np.vstack([np.zeros((1, d)), _prefix(centered @ Ipv)])
    C_ht = np.vstack([np.zeros((1, d)), _prefix(corr @ Ht)])
    C_ipv = np.vstack([np.zeros((1, d)), _prefix(corr @ Ipv)])

    init = Y[0] / a[0] - v
    idx = np.arange(1, n + 1)
    nn = idx[:, None].astype(float)
    R1 = init @ Ht + C_ht[idx] + drift[idx]
    R2 = init + C_ipv[idx]
    lhs_y = Y[idx] - nn * v
    rhs_y = M2[idx] + M1[idx] @ H + S_ht[idx] + R1 + Y[0]
    lhs_n = traj.N[idx] - nn * v
    rhs_n = M1[idx] + S_ipv[idx] + R2
    ry = np.abs(lhs_y - rhs_y).max(axis=1)
    rn = np.abs(lhs_n - rhs_n).max(axis=1)
    return DecompositionResiduals(
        y_residual=float(ry.max()), n_residual=float(rn.max()),
        y_path=ry if keep_paths else None, n_path=rn if keep_paths else None,
    )


@dataclass
class CovCheckReport:
    """Martingale increment second moments pooled over replicates.

    ``cross_mean`` is the average of ``dM1' dM2`` over all stages and
    replicates with standard errors ``cross_se`` (computed across replicate
    means).  ``m1_realized`` / ``m2_realized`` average ``(1/n) sum dMi' dMi``;
    the ``*_conditional`` versions average the exact conditional covariances.
    """

    n: int
    replicates: int
    cross_mean: np.ndarray
    cross_se: np.ndarray
    m1_realized: np.ndarray
    m1_conditional: np.ndarray
    m2_realized: np.ndarray
    m2_conditional: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray

    @staticmethod
    def _rel(A, B):
        nb = np.linalg.norm(B)
        return float(np.linalg.norm(A - B) / nb) if nb > 0 else float(np.linalg.norm(A - B))

    @property
    def m1_rel_error(self):
        return self._rel(self.m1_realized, self.sigma1)

    @property
    def m2_rel_error(self):
        return self._rel(self.m2_realized, self.sigma2)

    @property
    def max_cross_z(self):
        se = np.where(self.cross_se > 0, self.cross_se, np.inf)
        z = np.abs(self.cross_mean) / se
        z[(self.cross_se == 0) & (self.cross_mean == 0)] = 0.0
        return float(z.max())


def conditional_cov_check(replicates):
    """Orthogonality of the two martingales and their quadratic variation rates.

    ``replicates`` is any iterable of trajectories of one rule and one
    length; it is consumed once, so a generator keeps memory flat.
    """
    count = 0
    n = None
    cross_means = []
    m1r = m1c = m2r = m2c = None
    H = V = None
    for traj in replicates:
        traj._require_log()
        if n is None:
            n, H, V = traj.n, traj.H, traj.V
            d = traj.dim
            m1r, m1c, m2r, m2c = (np.zeros((d, d)) for _ in range(4))
        elif traj.n != n:
            raise ValidationError("replicates must share the number of stages")
        Y = traj.Y
        a = traj.a
        p = Y[:-1] / a[:-1, None]
        dM1 = traj.X - p
        dM2 = traj.rows - traj.Hm[np.arange(n), traj.draws]
        cross_means.append((dM1.T @ dM2) / n)
        m1r += dM1.T @ dM1 / n
        m2r += dM2.T @ dM2 / n
        pbar = p.mean(axis=0)
        m1c += np.diag(pbar) - p.T @ p / n
        m2c += np.einsum("q,qkl->kl", pbar, V)
        count += 1
    if count < 2:
        raise InsufficientReplicates(f"need at least 2 replicates, got {count}")
    if n == 0:
        raise InsufficientReplicates("replicates have no stages")

    from .covariance import sigma_matrices
    from .spectral import spectral_analyze

    S = spectral_analyze(H)
    s = S.row_sum_s
    noise = sigma_matrices(S.v, V / s**2, S.H)
    cm = np.array(cross_means)
    return CovCheckReport(
        n=n, replicates=count,
        cross_mean=cm.mean(axis=0), cross_se=cm.std(axis=0, ddof=1) / np.sqrt(count),
        m1_realized=m1r / count, m1_conditional=m1c / count,
        m2_realized=m2r / count / s**2, m2_conditional=m2c / count / s**2,
        sigma1=noise.sigma1, sigma2=noise.sigma2,
    )


# replicated endpoints ------------------------------------------------------

def _replicate_endpoints(rule_tables, Y0, stops, seed, index):
    support, cum, sizes = rule_tables
    d = Y0.size
    rng = make_stream(seed, index)
    Y = Y0.copy()
    N = np.zeros(d, dtype=np.int64)
    outY = np.empty((len(stops), d))
    outN = np.empty((len(stops), d), dtype=np.int64)
    done = 0
    for h, stop in enumerate(stops):
        while done < stop:
            k = min(_CHUNK, stop - done)
            u = rng.random((k, 1 + d))
            got = _kernels.advance_nolog(Y, N, u, support, cum, sizes)
            if got < k:
                raise AllMassLost(f"replicate {index} emptied at stage {done + got}")
            done += k
        outY[h] = Y
        outN[h] = N
    return outY, outN


def simulate_endpoints(rule, Y0, horizons, replicates, master_seed, threads=1):
    """``(Y, N)`` at each horizon for every replicate.

    Returns arrays of shape ``(replicates, len(horizons), d)``.  Replicate
    ``i`` draws from ``make_stream(master_seed, i)``, so results do not
    depend on ``threads``.
    """
    if not isinstance(rule, FiniteRule):
        raise ValidationError("replicated simulation needs a finite-support (homogeneous) rule")
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.size != rule.dim:
        raise ValidationError("Y0 does not match rule dimension")
    if not np.all(Y0 > 0):
        raise NonpositiveInitialCount(f"initial counts must be positive, got {Y0.tolist()}")
    stops = [int(h) for h in horizons]
    if any(b <= a for a, b in zip(stops, stops[1:])) or (stops and stops[0] < 0):
        raise ValidationError("horizons must be non-negative and strictly increasing")
    tables = rule.tables()
    R = int(replicates)
    d = rule.dim
    Yout = np.empty((R, len(stops), d))
    Nout = np.empty((R, len(stops), d), dtype=np.int64)

    def work(block):
        for i in block:
            Yout[i], Nout[i] = _replicate_endpoints(tables, Y0, stops, master_seed, i)

    threads = max(1, int(threads))
    blocks = [range(i, R, threads) for i in range(threads)] if threads > 1 else [range(R)]
    if threads == 1:
        work(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, blocks))
    return Yout, Nout


def replicate_trajectories(rule, Y0, n, replicates, master_seed):
    """Generator of logged trajectories for replicates ``0..replicates-1``."""
    for i in range(int(replicates)):
        yield run(init_urn(Y0, rule, make_stream(master_seed, i)), n)
