"""Addition rules: how many balls of each color join the urn after a draw.

A rule samples a full ``d x d`` replacement matrix ``D_m`` (every row, not
only the drawn one, so that row covariances are defined for all rows) and
declares its conditional moments.  Homogeneous rules have finite discrete
row distributions, which keeps every moment exact and lets the urn engine
compile them into lookup tables.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptySupport, InvalidProbability, RowSumViolation, ValidationError


class AdditionRule:
    """Interface shared by every rule.

    Subclasses provide ``H`` (declared limit generating matrix, raw scale),
    ``V`` (list of declared limit row covariances) and the three sampling /
    moment methods.  ``history`` is the urn state *before* the draw; stage
    ``history.m + 1`` is the one being generated.
    """

    homogeneous = False
    nonnegative = True

    @property
    def dim(self):
        return self.H.shape[0]

    def sample_D(self, history, drawn_type, rng):
        raise NotImplementedError

    def conditional_mean(self, history):
        raise NotImplementedError

    def conditional_row_cov(self, history, q):
        raise NotImplementedError

    def support_bound(self):
        return np.inf


class FiniteRule(AdditionRule):
    """Homogeneous rule with independent finite-support rows.

    ``rows[q] = (support, weights)`` with ``support`` of shape ``(K_q, d)``.
    Sampling a row consumes exactly one uniform; rows are sampled in order
    ``0..d-1`` on every stage.
    """

    homogeneous = True

    def __init__(self, rows, name="homogeneous", nonnegative=True):
        self.name = name
        self.nonnegative = nonnegative
        d = len(rows)
        if d < 1:
            raise EmptySupport("rule needs at least one row")
        self.supports = []
        self.weights = []
        for q, (support, weights) in enumerate(rows):
            support = np.atleast_2d(np.asarray(support, dtype=float))
            weights = np.atleast_1d(np.asarray(weights, dtype=float))
            if support.size == 0 or weights.size == 0:
                raise EmptySupport(f"row {q} has an empty support")
            if support.shape != (weights.size, d):
                raise ValidationError(
                    f"row {q}: support shape {support.shape} does not match "
                    f"{weights.size} weights over {d} colors"
                )
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise InvalidProbability(f"row {q}: weights must be >= 0 and sum to 1")
            if not np.all(np.isfinite(support)):
                raise ValidationError(f"row {q}: non-finite support point")
            if nonnegative and support.min() < 0:
                raise ValidationError(f"row {q}: negative ball counts in support")
            keep = weights > 0
            self.supports.append(support[keep])
            self.weights.append(weights[keep] / weights[keep].sum())

        self.H = np.array([w @ s for s, w in zip(self.supports, self.weights)])
        self.V = []
        for (s, w), mean in zip(zip(self.supports, self.weights), self.H):
            c = s - mean
            self.V.append((c.T * w) @ c)
        self._cum = [np.cumsum(w) for w in self.weights]

    def __repr__(self):
        return f"FiniteRule(name={self.name!r}, d={self.dim})"

    def _row_index(self, q, u):
        cum = self._cum[q]
        # half-open bins [cum[k-1], cum[k])
        return min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)

    def sample_D(self, history, drawn_type, rng):
        d = self.dim
        D = np.empty((d, d))
        for q in range(d):
            D[q] = self.supports[q][self._row_index(q, rng.random())]
        return D

    def conditional_mean(self, history=None):
        return self.H

    def conditional_row_cov(self, history=None, q=0):
        return self.V[q]

    def support_bound(self):
        return max(float(np.abs(s).max()) for s in self.supports)

    def tables(self):
        """Padded arrays ``(support[d, K, d], cumweights[d, K], sizes[d])``."""
        d = self.dim
        K = max(s.shape[0] for s in self.supports)
        support = np.zeros((d, K, d))
        cum = np.ones((d, K))
        sizes = np.zeros(d, dtype=np.int64)
        for q, (s, c) in enumerate(zip(self.supports, self._cum)):
            support[q, : s.shape[0]] = s
            cum[q, : c.size] = c
            cum[q, c.size - 1:] = 1.0
            sizes[q] = s.shape[0]
        return support, cum, sizes


@dataclass(frozen=True)
class RpwParams:
    """Response model for the two-arm generalized play-the-winner rule.

    Either dichotomous success probabilities ``p1, p2`` (``d_k(x) = x``) or
    explicit discrete laws ``d1 = (values, weights)``, ``d2 = ...`` for the
    number of same-color balls ``d_k(xi)`` in ``[0, 1]``.
    """

    p1: float = None
    p2: float = None
    d1: tuple = None
    d2: tuple = None

    def law(self, k):
        p = self.p1 if k == 1 else self.p2
        dist = self.d1 if k == 1 else self.d2
        if dist is None:
            if p is None:
                raise InvalidProbability(f"treatment {k}: give p{k} or d{k}")
            if not 0.0 <= p <= 1.0:
                raise InvalidProbability(f"p{k}={p} outside [0, 1]")
            return np.array([0.0, 1.0]), np.array([1.0 - p, p])
        values, weights = (np.atleast_1d(np.asarray(x, dtype=float)) for x in dist)
        if values.size == 0:
            raise EmptySupport(f"d{k} has an empty support")
        if values.shape != weights.shape:
            raise InvalidProbability(f"d{k}: values and weights differ in length")
        if values.min() < 0 or values.max() > 1:
            raise InvalidProbability(f"d{k} support must lie in [0, 1]")
        if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidProbability(f"d{k} weights must be >= 0 and sum to 1")
        return values, weights

    def moments(self, k):
        """``(p_k, a_k)``: mean and variance of ``d_k(xi)``."""
        values, weights = self.law(k)
        p = float(weights @ values)
        a = float(weights @ (values - p) ** 2)
        return p, a


def rpw_rule(params):
    """Generalized randomized play-the-winner rule.

    Drawing treatment 1 with response ``x`` adds ``x`` balls of type 1 and
    ``1 - x`` of type 2; treatment 2 symmetrically.
    """
    if not isinstance(params, RpwParams):
        params = RpwParams(**params)
    x1, w1 = params.law(1)
    x2, w2 = params.law(2)
    row1 = np.column_stack([x1, 1.0 - x1])
    row2 = np.column_stack([1.0 - x2, x2])
    rule = FiniteRule([(row1, w1), (row2, w2)], name="rpw")
    rule.params = params
    return rule


def homogeneous_rule(row_samplers, nonnegative=True):
    """Rule from ``d`` finite row laws given as ``(support, weights)`` pairs."""
    return FiniteRule(list(row_samplers), name="homogeneous", nonnegative=nonnegative)


def deterministic_rule(H):
    """Point-mass rule ``D_m = H``; every row covariance vanishes."""
    H = np.asarray(H, dtype=float)
    return FiniteRule([(row[None, :], [1.0]) for row in H], name="deterministic")


def multinomial_rule(v):
    """Each row adds one ball whose color is drawn from ``v``."""
    v = np.asarray(v, dtype=float)
    d = v.size
    return FiniteRule([(np.eye(d), v) for _ in range(d)], name="multinomial")


class PowerDecay:
    """Perturbation ``H_m = H + m**(-alpha) * E`` with zero-row-sum ``E``."""

    def __init__(self, H, E, alpha):
        self.H = np.asarray(H, dtype=float)
        self.E = np.asarray(E, dtype=float)
        self.alpha = float(alpha)
        if self.E.shape != self.H.shape:
            raise ValidationError("perturbation E must match H in shape")
        if np.abs(self.E.sum(axis=1)).max() > 1e-12:
            raise RowSumViolation("perturbation E must have zero row sums")

    def at(self, m):
        return self.H + float(m) ** (-self.alpha) * self.E

    def __call__(self, history):
        return self.at(history.m + 1)


class NonhomogeneousRule(AdditionRule):
    """Base rule re-centred on a history-dependent mean ``H_m``.

    The drawn sample is shifted additively by ``H_m - H``; entries pushed
    below zero are floored and the row is rescaled back to its shifted row
    sum.  Flooring only triggers when the shift exceeds the base sample, so
    the declared ``H_m`` is exact whenever that never happens.
    """

    homogeneous = False

    def __init__(self, base, perturbation):
        self.base = base
        self.perturbation = perturbation
        self.H = base.H
        self.V = base.V
        self.nonnegative = base.nonnegative
        self.name = f"nonhomogeneous({getattr(base, 'name', 'rule')})"
        self._row_sums = base.H.sum(axis=1)

    def conditional_mean(self, history):
        Hm = np.asarray(self.perturbation(history), dtype=float)
        if Hm.shape != self.H.shape:
            raise RowSumViolation(f"perturbation returned shape {Hm.shape}")
        if np.abs(Hm.sum(axis=1) - self._row_sums).max() > 1e-9:
            raise RowSumViolation("perturbed generating matrix changes row sums")
        return Hm

    def conditional_row_cov(self, history, q):
        return self.base.conditional_row_cov(history, q)

    def sample_D(self, history, drawn_type, rng):
        D = self.base.sample_D(history, drawn_type, rng)
        D = D + (self.conditional_mean(history) - self.H)
        if self.nonnegative and D.min() < 0:
            target = D.sum(axis=1)
            D = np.clip(D, 0.0, None)
            sums = D.sum(axis=1)
            scale = np.divide(target, sums, out=np.ones_like(sums), where=sums > 0)
            D = D * scale[:, None]
        return D

    def support_bound(self):
        return self.base.support_bound() + float(np.abs(self.conditional_mean(_Stage(0)) - self.H).max())


@dataclass
class _Stage:
    m: int


def nonhomogeneous_wrapper(base, perturbation):
    return NonhomogeneousRule(base, perturbation)


@dataclass
class DiagnosticsReport:
    """Descriptive summaries of how fast ``H_m`` approaches ``H``."""

    checkpoints: np.ndarray
    partial_sums: np.ndarray
    growth_exponent: float
    weighted_partial_sums: np.ndarray
    weighted_term_exponent: float
    summability_indicated: bool
    tau_estimate: float

    def to_dict(self):
        return {
            "checkpoints": self.checkpoints.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "growth_exponent": self.growth_exponent,
            "weighted_partial_sums": self.weighted_partial_sums.tolist(),
            "weighted_term_exponent": self.weighted_term_exponent,
            "summability_indicated": self.summability_indicated,
            "tau_estimate": self.tau_estimate,
        }


def _norm_sequence(h_sequence, H, horizon):
    H = np.asarray(H, dtype=float)
    if callable(h_sequence):
        fn = getattr(h_sequence, "at", h_sequence)
        if isinstance(h_sequence, PowerDecay):
            m = np.arange(1, horizon + 1, dtype=float)
            return m ** (-h_sequence.alpha) * np.linalg.norm(h_sequence.E, 2)
        mats = np.array([fn(m) for m in range(1, horizon + 1)])
    else:
        mats = np.asarray(h_sequence, dtype=float)[:horizon]
        if mats.shape[0] < horizon:
            raise ValidationError(f"h_sequence has {mats.shape[0]} < horizon={horizon} matrices")
    return np.linalg.norm(mats - H, ord=2, axis=(-2, -1))


def _loglog_slope(x, y):
    ok = y > 0
    if ok.sum() < 2:
        return -np.inf
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def assumption_diagnostics(h_sequence, H, horizon):
    """Partial sums of ``||H_m - H||`` and ``||H_m - H|| / m**0.5`` up to ``horizon``.

    ``h_sequence`` is an array of matrices ``H_1..H_n``, a callable
    ``m -> H_m`` or a :class:`PowerDecay`.  Exponents are fitted over the
    last two decades below ``horizon``.  Nothing here passes or fails.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    norms = _norm_sequence(h_sequence, H, horizon)
    m = np.arange(1, horizon + 1, dtype=float)
    partial = np.cumsum(norms)
    weighted = np.cumsum(norms / np.sqrt(m))

    checkpoints = np.unique(np.geomspace(1, horizon, num=min(horizon, 200)).astype(int))
    idx = checkpoints - 1
    lo = max(1, horizon // 100)
    tail = checkpoints >= lo
    if partial[-1] == 0:
        growth = -np.inf
        term_exp = np.inf
        tau = np.inf
    else:
        growth = _loglog_slope(checkpoints[tail].astype(float), partial[idx[tail]])
        term_exp = -_loglog_slope(m[lo - 1:], (norms / np.sqrt(m))[lo - 1:])
        tau = 0.5 - max(growth, 0.0)
    return DiagnosticsReport(
        checkpoints=checkpoints,
        partial_sums=partial[idx],
        growth_exponent=growth,
        weighted_partial_sums=weighted[idx],
        weighted_term_exponent=term_exp,
        summability_indicated=bool(term_exp > 1.0),
        tau_estimate=tau,
    )
