"""Monte Carlo experiments against the Gaussian limit theory.

The normalized fluctuation at horizon ``n`` is

    n**-0.5 * ((Y_n - Y_0)/s - n v, N_n - n v)

times ``(log n)**(1/2 - nu)`` in the critical regime.  The initial
composition is removed because it adds an ``O(n**-0.5)`` bias to the mean
that does not affect the limit law.
"""

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .covariance import noise_for_rule, theoretical_gamma
from .exceptions import (
    HorizonTooShort,
    RegimeMismatch,
    ShapeMismatch,
    SingularTheoreticalCovariance,
    ValidationError,
)
from .rules import FiniteRule, NonhomogeneousRule, assumption_diagnostics
from .spectral import CRITICAL, spectral_analyze
from .streams import make_stream
from .urn import init_urn, run, simulate_endpoints

NULL_REL = 1e-10


@dataclass
class ExperimentConfig:
    rule: object
    Y0: np.ndarray
    horizons: list
    replicates: int
    master_seed: int = 0
    regime: str = None
    tolerance: float = 0.05
    ks_alpha: float = 1e-3
    threads: int = 1
    deterministic: bool = False
    out_json: str = None
    out_csv: str = None
    eig_tol: float = 1e-9
    nu: int = None
    quad_tol: float = 1e-10
    rule_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y0 = np.asarray(self.Y0, dtype=float)
        self.horizons = [int(h) for h in self.horizons]
        if int(self.replicates) < 2:
            raise ValidationError("replicates must be >= 2")
        if not self.horizons or self.horizons[0] < 2 or any(
                b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValidationError("horizons must be strictly increasing integers >= 2")
        if not self.tolerance > 0 or not 0 < self.ks_alpha < 1:
            raise ValidationError("tolerance must be positive and ks_alpha in (0, 1)")


# ---------------------------------------------------------------------------
# comparison

@dataclass
class Verdict:
    passed: bool
    tol: float
    frobenius_rel: float
    entry_rel: np.ndarray
    entry_abs: np.ndarray

    @property
    def max_entry_rel(self):
        e = self.entry_rel[np.isfinite(self.entry_rel)]
        return float(e.max()) if e.size else 0.0

    @property
    def label(self):
        return "PASS" if self.passed else "FAIL"

    def to_dict(self):
        return {
            "verdict": self.label,
            "tol": self.tol,
            "frobenius_rel": self.frobenius_rel,
            "max_entry_rel": self.max_entry_rel,
            "entry_rel": [[None if not math.isfinite(x) else x for x in row]
                          for row in self.entry_rel.tolist()],
        }


def compare(empirical, theoretical, tol):
    """PASS iff the Frobenius relative error is at most ``tol``.

    Entries where the theoretical value vanishes (null directions) get no
    relative error.  If the whole theoretical matrix vanishes the absolute
    Frobenius norm is compared instead.
    """
    E = np.atleast_2d(np.asarray(empirical, dtype=float))
    T = np.atleast_2d(np.asarray(theoretical, dtype=float))
    if E.shape != T.shape:
        raise ShapeMismatch(f"{E.shape} vs {T.shape}")
    diff = E - T
    tn = np.linalg.norm(T)
    frob = float(np.linalg.norm(diff) / tn) if tn > 0 else float(np.linalg.norm(diff))
    cut = NULL_REL * (np.abs(T).max() if T.size else 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(np.abs(T) > cut, np.abs(diff) / np.abs(T), np.nan)
    return Verdict(passed=frob <= tol, tol=float(tol), frobenius_rel=frob,
                   entry_rel=rel, entry_abs=np.abs(diff))


def normality_check(samples, cov, alpha=1e-3, rel=NULL_REL):
    """Mahalanobis distances on the non-null eigenspace of ``cov`` vs chi-square.

    Returns ``None`` when ``cov`` has no non-null direction.
    """
    cov = np.asarray(cov, dtype=float)
    w, U = np.linalg.eigh(0.5 * (cov + cov.T))
    if not np.all(np.isfinite(w)):
        raise SingularTheoreticalCovariance("eigendecomposition failed")
    top = float(w.max()) if w.size else 0.0
    if top <= 0:
        return None
    keep = w > rel * top
    if np.any(w < -1e-8 * top):
        raise SingularTheoreticalCovariance("theoretical covariance is not PSD")
    rank = int(keep.sum())
    z = (np.asarray(samples) @ U[:, keep]) / np.sqrt(w[keep])
    d2 = np.sum(z * z, axis=1)
    ks = stats.kstest(d2, stats.chi2(rank).cdf)
    return {"rank": rank, "ks_statistic": float(ks.statistic), "p_value": float(ks.pvalue),
            "alpha": alpha, "rejected": bool(ks.pvalue < alpha)}


# ---------------------------------------------------------------------------
# fluctuations

def fluctuation_scale(n, regime, nu=1):
    n = np.asarray(n, dtype=float)
    scale = n ** -0.5
    if regime == CRITICAL:
        scale = scale * np.log(n) ** (0.5 - nu)
    return scale


def _endpoints(cfg):
    if isinstance(cfg.rule, FiniteRule):
        return simulate_endpoints(cfg.rule, cfg.Y0, cfg.horizons, cfg.replicates,
                                  cfg.master_seed, cfg.threads)
    R, d = int(cfg.replicates), cfg.rule.dim
    idx = np.asarray(cfg.horizons)
    Y = np.empty((R, idx.size, d))
    N = np.empty((R, idx.size, d), dtype=np.int64)
    for i in range(R):
        traj = run(init_urn(cfg.Y0, cfg.rule, make_stream(cfg.master_seed, i)), idx[-1])
        Y[i] = traj.Y[idx]
        N[i] = traj.N[idx]
    return Y, N


def stacked_fluctuations(Y, N, Y0, S, horizons):
    """Normalized ``(Y, N)`` fluctuations, shape ``(R, len(horizons), 2d)``."""
    n = np.asarray(horizons, dtype=float)
    centre = n[:, None] * S.v
    y = (Y - Y0) / S.row_sum_s - centre
    nn = N - centre
    scale = fluctuation_scale(n, S.regime, S.nu)[None, :, None]
    return np.concatenate([y, nn], axis=-1) * scale


def _covariance(X):
    mean = X.mean(axis=0)
    C = X - mean
    cov = C.T @ C / (X.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)


@dataclass
class ExperimentReport:
    config: dict
    spectral: dict
    theoretical: np.ndarray
    horizons: list
    means: list
    covariances: list
    verdicts: list
    normality: list
    mean_z: list
    diagnostics: dict = None
    wall_clock: float = None

    @property
    def passed(self):
        return bool(self.verdicts[-1].passed)

    def to_dict(self):
        out = {
            "config": self.config,
            "spectral": self.spectral,
            "theoretical_gamma": self.theoretical.tolist(),
            "horizons": [],
            "verdict": "PASS" if self.passed else "FAIL",
        }
        for n, m, c, v, nm, z in zip(self.horizons, self.means, self.covariances,
                                      self.verdicts, self.normality, self.mean_z):
            out["horizons"].append({
                "n": n, "mean": m.tolist(), "covariance": c.tolist(),
                "comparison": v.to_dict(), "normality": nm, "max_mean_z": z,
            })
        if self.diagnostics is not None:
            out["assumption_diagnostics"] = self.diagnostics
        if self.wall_clock is not None:
            out["wall_clock_seconds"] = self.wall_clock
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False,
                          default=_json_default)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon", "component", "empirical", "theoretical", "rel_err"])
        T = self.theoretical
        k = T.shape[0]
        for n, C, v in zip(self.horizons, self.covariances, self.verdicts):
            for i in range(k):
                for j in range(i, k):
                    r = v.entry_rel[i, j]
                    w.writerow([n, f"gamma[{i + 1},{j + 1}]", repr(float(C[i, j])),
                                repr(float(T[i, j])), "" if not math.isfinite(r) else repr(float(r))])
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def mc_experiment(cfg):
    """Simulate ``cfg.replicates`` urns and compare fluctuation covariances with theory."""
    start = time.perf_counter()
    S = spectral_analyze(cfg.rule.H, eig_tol=cfg.eig_tol, nu_override=cfg.nu)
    if cfg.regime is not None and cfg.regime != S.regime:
        raise RegimeMismatch(f"expected {cfg.regime}, rule is {S.regime} (rho={S.rho:.6g})")
    noise = noise_for_rule(S, cfg.rule)
    gamma = theoretical_gamma(S, noise, quad_tol=cfg.quad_tol).gamma

    Y, N = _endpoints(cfg)
    X = stacked_fluctuations(Y, N, cfg.Y0, S, cfg.horizons)
    R = X.shape[0]
    means, covs, verdicts, normal, mean_z = [], [], [], [], []
    for h in range(len(cfg.horizons)):
        m, C = _covariance(X[:, h])
        means.append(m)
        covs.append(C)
        verdicts.append(compare(C, gamma, cfg.tolerance))
        normal.append(normality_check(X[:, h], gamma, cfg.ks_alpha))
        se = np.sqrt(np.diag(C) / R)
        z = np.divide(np.abs(m), se, out=np.zeros_like(m), where=se > 0)
        mean_z.append(float(z.max()))

    diagnostics = None
    if isinstance(cfg.rule, NonhomogeneousRule):
        diagnostics = assumption_diagnostics(cfg.rule.perturbation, cfg.rule.H,
                                             cfg.horizons[-1]).to_dict()
        diagnostics = json.loads(json.dumps(diagnostics, default=_json_default).replace(
            "Infinity", "null").replace("NaN", "null"))

    config = {
        "rule": cfg.rule_spec or {"name": getattr(cfg.rule, "name", "rule")},
        "Y0": cfg.Y0.tolist(),
        "horizons": cfg.horizons,
        "replicates": int(cfg.replicates),
        "master_seed": int(cfg.master_seed),
        "tolerance": cfg.tolerance,
        "ks_alpha": cfg.ks_alpha,
        "deterministic_reduction": bool(cfg.deterministic),
        "stream": "Philox keyed by SeedSequence(master_seed, spawn_key=(replicate,))",
    }
    spectral = {"v": S.v.tolist(), "rho": float(S.rho), "nu": int(S.nu), "regime": S.regime}
    return ExperimentReport(
        config=config, spectral=spectral, theoretical=gamma, horizons=list(cfg.horizons),
        means=means, covariances=covs, verdicts=verdicts, normality=normal, mean_z=mean_z,
        diagnostics=diagnostics,
        wall_clock=None if cfg.deterministic else time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# iterated-logarithm envelopes

def _log(x):
    return np.log(np.maximum(np.e, x))


def lil_envelope_value(n, critical=False):
    """``sqrt(2 n log log n)``, or ``sqrt(2 n log n log log log n)`` when critical."""
    n = np.asarray(n, dtype=float)
    if critical:
        return np.sqrt(2.0 * n * _log(n) * _log(_log(_log(n))))
    return np.sqrt(2.0 * n * _log(_log(n)))


def checkpoints(n_max, per_decade=50, start=10):
    pts = np.geomspace(start, n_max, int(round(per_decade * math.log10(n_max / start))) + 1)
    return np.unique(np.round(pts).astype(np.int64))


@dataclass
class EnvelopeReport:
    n_max: list
    component: tuple
    sups: np.ndarray
    medians: list
    p95: list
    critical: bool

    @property
    def median_ratio(self):
        a, b = self.medians[0], self.medians[-1]
        if a == 0:
            return 1.0 if b == 0 else math.inf
        return b / a

    def to_dict(self):
        return {"n_max": self.n_max, "component": list(self.component),
                "critical_envelope": self.critical,
                "median": self.medians, "p95": self.p95,
                "median_ratio_last_first": _finite(self.median_ratio)}


def lil_envelope(cfg, component=("N", 0), n_max=(10**4, 10**5, 10**6), per_decade=50,
                 min_horizon=10**5):
    """Per-replicate sup of ``|fluctuation| / envelope`` over checkpoints up to each ``n_max``.

    ``component`` is ``("Y", k)`` or ``("N", k)`` with a 0-based color.
    """
    n_max = sorted(int(x) for x in n_max)
    if n_max[-1] < min_horizon:
        raise HorizonTooShort(f"largest horizon {n_max[-1]} < {min_horizon}")
    kind, k = component
    if kind not in ("Y", "N"):
        raise ValidationError("component must be ('Y', k) or ('N', k)")
    S = spectral_analyze(cfg.rule.H, eig_tol=cfg.eig_tol, nu_override=cfg.nu)
    critical = S.regime == CRITICAL
    pts = checkpoints(n_max[-1], per_decade)
    sub = ExperimentConfig(rule=cfg.rule, Y0=cfg.Y0, horizons=list(pts),
                           replicates=cfg.replicates, master_seed=cfg.master_seed,
                           threads=cfg.threads, eig_tol=cfg.eig_tol, nu=cfg.nu)
    Y, N = _endpoints(sub)
    if kind == "Y":
        f = (Y[:, :, k] - cfg.Y0[k]) / S.row_sum_s - pts * S.v[k]
    else:
        f = N[:, :, k] - pts * S.v[k]
    ratio = np.abs(f) / lil_envelope_value(pts, critical)
    sups = np.array([ratio[:, pts <= m].max(axis=1) for m in n_max])
    return EnvelopeReport(
        n_max=n_max, component=(kind, int(k)), sups=sups,
        medians=[float(np.median(s)) for s in sups],
        p95=[float(np.percentile(s, 95)) for s in sups], critical=critical,
    )
