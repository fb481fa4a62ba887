"""Asymptotic covariances of the stacked fluctuation ``(Y_n - n v, N_n - n v)``.

Subcritical (``rho < 1/2``) blocks are integrals of ``x**(-H~') M x**(-H~)``
over ``(0, 1]``.  They are evaluated on ``u = -ln x`` with composite
Gauss-Legendre panels and cross-checked against the Lyapunov equation
``X - H~' X - X H~ = M`` that the ``Y`` block satisfies.

Critical (``rho = 1/2``) blocks come from spectral projectors onto the
critical eigenvalues, which makes them independent of how the
eigenvectors are normalized.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_continuous_lyapunov

from ._linalg import expm, is_psd
from .exceptions import (
    CriticalRegime,
    DimensionMismatch,
    NotCritical,
    QuadratureDivergence,
    SupercriticalUnsupported,
    SylvesterMismatch,
    UnsupportedJordanStructure,
    ValidationError,
)
from .spectral import CRITICAL, SUBCRITICAL, SpectralData, growth_profile


@dataclass(frozen=True)
class NoiseMatrices:
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray

    def to_dict(self):
        return {"sigma1": self.sigma1.tolist(), "sigma2": self.sigma2.tolist(),
                "sigma": self.sigma.tolist()}


def sigma_matrices(v, V, H):
    """Draw noise ``diag(v) - v'v``, addition noise ``sum_q v_q V_q`` and their push-forward."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    V = np.asarray(V, dtype=float)
    d = v.size
    if H.shape != (d, d) or V.shape != (d, d, d):
        raise DimensionMismatch(f"v has {d} entries but H is {H.shape} and V is {V.shape}")
    sigma1 = np.diag(v) - np.outer(v, v)
    sigma2 = np.einsum("q,qkl->kl", v, V)
    sigma2 = 0.5 * (sigma2 + sigma2.T)
    sigma = H.T @ sigma1 @ H + sigma2
    return NoiseMatrices(sigma1=sigma1, sigma2=sigma2, sigma=0.5 * (sigma + sigma.T))


def noise_for_rule(S, rule):
    """Noise matrices on the normalized scale for a rule with limit ``(H, V)``."""
    V = np.asarray(rule.V, dtype=float) / S.row_sum_s**2
    return sigma_matrices(S.v, V, S.H)


@dataclass
class CovarianceReport:
    gamma: np.ndarray
    regime: str
    method: dict = field(default_factory=dict)
    critical_metadata: list = field(default_factory=list)

    @property
    def dim(self):
        return self.gamma.shape[0] // 2

    def block(self, i, j):
        d = self.dim
        return self.gamma[(i - 1) * d:i * d, (j - 1) * d:j * d]

    @property
    def g11(self):
        return self.block(1, 1)

    @property
    def g12(self):
        return self.block(1, 2)

    @property
    def g21(self):
        return self.block(2, 1)

    @property
    def g22(self):
        return self.block(2, 2)

    def to_dict(self, S=None, noise=None):
        out = {"regime": self.regime}
        if S is not None:
            out.update(v=S.v.tolist(), rho=float(S.rho), nu=int(S.nu))
        if noise is not None:
            out.update(sigma1=noise.sigma1.tolist(), sigma2=noise.sigma2.tolist())
        out["gamma_blocks"] = {
            f"{i}{j}": self.block(i, j).tolist() for i in (1, 2) for j in (1, 2)
        }
        out["gamma"] = self.gamma.tolist()
        out["method"] = self.method
        if self.critical_metadata:
            out["critical_eigenvectors"] = self.critical_metadata
        return out


def _assemble(g11, g12, g22):
    top = np.hstack([g11, g12])
    bottom = np.hstack([g12.T, g22])
    G = np.vstack([top, bottom])
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# quadrature on u = -ln x

class _PanelRule:
    """Composite Gauss-Legendre rule on ``[0, U]`` with equal panels.

    Kernels ``exp(u H~)`` at the nodes are products ``E_k L_i`` of panel
    start exponentials and shared local offsets, and the running integral
    ``K(u) = int_0^u exp(r H~) dr`` is accumulated panel by panel.
    """

    def __init__(self, Ht, U, panels, order=16):
        d = Ht.shape[0]
        xi, w = leggauss(order)
        h = U / panels
        offsets = 0.5 * h * (xi + 1.0)
        weights = 0.5 * h * w
        starts = h * np.arange(panels)

        E = expm(starts[:, None, None] * Ht)                  # (P, d, d)
        L = expm(offsets[:, None, None] * Ht)                 # (n, d, d)
        self.phi = np.einsum("kab,ibc->kiac", E, L)           # exp(u H~)
        u = starts[:, None] + offsets[None, :]
        self.u = u
        self.w = np.exp(-u) * weights[None, :]

        # local running integrals int_0^{o_i} exp(r H~) dr
        inner = 0.5 * offsets[:, None] * (xi[None, :] + 1.0)  # (n, n)
        inner_w = 0.5 * offsets[:, None] * w[None, :]
        Li = expm(inner[..., None, None] * Ht)                # (n, n, d, d)
        J = np.einsum("ij,ijab->iab", inner_w, Li)
        panel_int = np.einsum("i,iab->ab", weights, L)
        K0 = np.concatenate([np.zeros((1, d, d)), np.cumsum(E @ panel_int, axis=0)[:-1]])
        self.K = K0[:, None] + np.einsum("kab,ibc->kiac", E, J)
        self.panels = panels
        self.U = U

    def sandwich(self, Lam, left="phi", right="phi"):
        A = getattr(self, left)
        B = getattr(self, right)
        return np.einsum("ki,kiba,bc,kicd->ad", self.w, A, Lam, B)


def _tail_cutoff(S, scale, quad_tol, max_cutoff=20000.0):
    decay = 1.0 - 2.0 * S.rho
    if decay <= 0:
        raise QuadratureDivergence("integrals diverge for rho >= 1/2")
    _, _, ratio = growth_profile(S, range(0, 21))
    C = max(1.0, float(np.max(ratio)))
    target = quad_tol * scale

    def bound(U):
        return C * C * scale * math.exp(-decay * U) * (1.0 + U) ** (2 * S.nu + 2) / decay

    U = 8.0
    while bound(U) > target:
        U *= 1.25
        if U > max_cutoff:
            raise QuadratureDivergence(f"tail cutoff exceeds {max_cutoff:g} (rho={S.rho:.6g})")
    return U, C


def _subcritical_pieces(S, noise, U, panels, order):
    rule = _PanelRule(S.h_tilde, U, panels, order)
    A_sigma = rule.sandwich(noise.sigma)
    A1 = rule.sandwich(noise.sigma1)
    A2 = rule.sandwich(noise.sigma2)
    B2 = rule.sandwich(noise.sigma2, "K", "K")
    return A_sigma, A1, A2, B2


def gamma_subcritical(S, noise, quad_tol=1e-10, order=16, max_doublings=8):
    """Limit covariance ``Gamma`` of ``n**-0.5 (Y_n - n v, N_n - n v)`` for ``rho < 1/2``.

    Panels are doubled until two successive estimates agree to ``quad_tol``
    in relative Frobenius norm.  The ``Y`` block is then compared with the
    Lyapunov solution; disagreement above ``10 * quad_tol`` raises
    :class:`SylvesterMismatch`.
    """
    if S.regime != SUBCRITICAL or S.rho >= 0.5 - S.eig_tol:
        raise CriticalRegime(f"rho={S.rho:.6g}: use gamma_critical")
    d = S.dim
    H, Ht, v = S.H, S.h_tilde, S.v
    Ipv = np.eye(d) - np.outer(np.ones(d), v)
    scale = max(np.linalg.norm(noise.sigma), np.linalg.norm(noise.sigma1),
                np.linalg.norm(noise.sigma2))
    if scale == 0:
        z = np.zeros((d, d))
        return CovarianceReport(gamma=_assemble(z, z, z), regime=SUBCRITICAL,
                                method={"quad_tol": quad_tol, "panels": 0, "cutoff": 0.0,
                                        "sylvester_residual": 0.0})

    U, C = _tail_cutoff(S, scale, quad_tol)
    panels = max(4, int(math.ceil(U)))
    prev = None
    for _ in range(max_doublings + 1):
        pieces = _subcritical_pieces(S, noise, U, panels, order)
        stacked = np.concatenate([p.ravel() for p in pieces])
        if prev is not None:
            change = np.linalg.norm(stacked - prev) / max(np.linalg.norm(stacked), 1e-300)
            if change < quad_tol:
                break
        prev = stacked
        panels *= 2
    else:
        raise QuadratureDivergence(f"panel doubling did not settle below {quad_tol:g}")
    panels_used = panels
    A_sigma, A1, A2, B2 = pieces

    g11 = 0.5 * (A_sigma + A_sigma.T)
    g12 = H.T @ A1 + np.linalg.solve(np.eye(d) - Ht.T, A2) @ Ipv
    g22 = A1 + Ipv.T @ B2 @ Ipv

    lyap = solve_continuous_lyapunov((Ht - 0.5 * np.eye(d)).T, -noise.sigma)
    mismatch = np.linalg.norm(g11 - lyap) / max(np.linalg.norm(lyap), 1e-300)
    if mismatch > 10 * quad_tol and np.linalg.norm(g11 - lyap) > 10 * quad_tol * scale:
        raise SylvesterMismatch(f"quadrature vs Lyapunov relative mismatch {mismatch:.3e}")
    residual = np.linalg.norm(g11 - Ht.T @ g11 - g11 @ Ht - noise.sigma)

    return CovarianceReport(
        gamma=_assemble(g11, g12, 0.5 * (g22 + g22.T)),
        regime=SUBCRITICAL,
        method={
            "quad_tol": quad_tol,
            "panels": int(panels_used),
            "gl_order": int(order),
            "cutoff": float(U),
            "growth_constant": float(C),
            "sylvester_residual": float(residual),
            "sylvester_mismatch": float(mismatch),
        },
    )


def lyapunov_gamma11(S, noise):
    """``Y`` block from the Lyapunov equation alone (independent of quadrature)."""
    d = S.dim
    return solve_continuous_lyapunov((S.h_tilde - 0.5 * np.eye(d)).T, -noise.sigma)


def finite_horizon_moments(Ht, Lam, log_t, panels=None, order=16):
    """Per-unit-time second moments of the Equ2 solution started at 1.

    For ``S_hat`` driven by covariance ``Lam`` and ``I_t = int_1^t S_hat/x dx``
    returns ``(Var S_hat_t, Var I_t, Cov(S_hat_t, I_t))`` divided by ``t``,
    with ``log_t = ln t``.
    """
    Ht = np.asarray(Ht, dtype=float)
    panels = panels or max(8, int(math.ceil(4 * log_t)))
    rule = _PanelRule(Ht, log_t, panels, order)
    return (rule.sandwich(Lam), rule.sandwich(Lam, "K", "K"), rule.sandwich(Lam, "phi", "K"))


# ---------------------------------------------------------------------------
# critical case

def _critical_projectors(S, tol=1e-7):
    """Spectral projectors ``P = R (L R)^-1 L`` for each distinct critical eigenvalue."""
    groups = {}
    for lam, vec in S.critical_pairs:
        key = min(groups, key=lambda z: abs(z - lam), default=None)
        if key is not None and abs(key - lam) <= 1e-5:
            groups[key].append(vec)
        else:
            groups[lam] = [vec]
    d = S.dim
    out = []
    for lam, vecs in groups.items():
        R = np.array(vecs).T                                   # d x m
        m = R.shape[1]
        _, sv, vh = np.linalg.svd(S.H.T - lam * np.eye(d))
        if np.sum(sv <= tol * max(1.0, sv[0])) < m:
            raise UnsupportedJordanStructure(f"no {m}-dimensional left eigenspace at {lam:.6g}")
        Lrows = vh.conj()[d - m:]                              # m x d, rows u with u H = lam u
        G = Lrows @ R
        if np.linalg.cond(G) > 1e10:
            raise UnsupportedJordanStructure(f"critical eigenvalue {lam:.6g} is defective")
        P = R @ np.linalg.solve(G, Lrows)
        out.append((complex(lam), P))
    return out


def gamma_critical(S, noise, jordan_basis=None, jordan_blocks=None, tol=1e-9):
    """Limit covariance ``Gamma~`` for ``rho = 1/2`` under the ``(log n)**(1/2 - nu)`` scaling.

    With ``nu = 1`` the blocks are ``sum_l P_l^* M_l P_l`` over the spectral
    projectors of the critical eigenvalues ``lambda_l``, with
    ``M_l = |l|^2 S1 + S2`` (Y block), ``S1 + |l|^-2 S2`` (N block) and
    ``conj(l) S1 + S2 / l`` (cross block).  For ``nu > 1`` pass
    ``jordan_basis`` (columns ``T``, first column ``1'``) and
    ``jordan_blocks`` (list of ``(eigenvalue, order)`` following the
    Perron column).
    """
    if S.regime != CRITICAL:
        raise NotCritical(f"rho={S.rho:.6g} is not critical")
    d = S.dim
    S1, S2 = noise.sigma1, noise.sigma2
    g11 = np.zeros((d, d), dtype=complex)
    g12 = np.zeros((d, d), dtype=complex)
    g22 = np.zeros((d, d), dtype=complex)
    meta = []

    if S.nu == 1 and jordan_basis is None:
        for lam, P in _critical_projectors(S):
            Ph = P.conj().T
            a2 = abs(lam) ** 2
            g11 += Ph @ (a2 * S1 + S2) @ P
            g22 += Ph @ (S1 + S2 / a2) @ P
            g12 += Ph @ (np.conj(lam) * S1 + S2 / lam) @ P
        for lam, vec in S.critical_pairs:
            meta.append({
                "eigenvalue": [lam.real, lam.imag],
                "normalization": "unit euclidean norm, first nonzero component real positive",
                "vector_real": vec.real.tolist(),
                "vector_imag": vec.imag.tolist(),
            })
        method = {"construction": "spectral projectors", "nu": 1}
    else:
        if jordan_basis is None or jordan_blocks is None:
            raise UnsupportedJordanStructure(
                f"nu={S.nu} needs an explicit Jordan basis and block structure"
            )
        T = np.asarray(jordan_basis, dtype=complex)
        if T.shape != (d, d):
            raise DimensionMismatch("Jordan basis must be d x d")
        sizes = [int(k) for _, k in jordan_blocks]
        if 1 + sum(sizes) != d:
            raise DimensionMismatch("Jordan block orders must sum to d - 1")
        J = np.zeros((d, d), dtype=complex)
        J[0, 0] = 1.0
        pos = 1
        for lam, k in jordan_blocks:
            for j in range(k):
                J[pos + j, pos + j] = lam
                if j + 1 < k:
                    J[pos + j, pos + j + 1] = 1.0
            pos += k
        if np.abs(S.H @ T - T @ J).max() > 1e-8 * max(1.0, np.abs(T).max()):
            raise ValidationError("jordan_basis does not satisfy H T = T diag(1, J)")
        Tinv = np.linalg.inv(T)
        nu = S.nu
        c = 1.0 / (math.factorial(nu - 1) ** 2 * (2 * nu - 1))
        pos = 1
        for lam, k in jordan_blocks:
            lam = complex(lam)
            if abs(lam.real - 0.5) <= 1e-6 and k == nu:
                t = T[:, pos]
                u = Tinv[pos + k - 1]
                outer = np.outer(u.conj(), u)
                a2 = abs(lam) ** 2
                q1 = t.conj() @ S1 @ t
                q2 = t.conj() @ S2 @ t
                g11 += c * (a2 * q1 + q2) * outer
                g22 += c * (q1 + q2 / a2) * outer
                g12 += c * (np.conj(lam) * q1 + q2 / lam) * outer
                meta.append({"eigenvalue": [lam.real, lam.imag], "order": k,
                             "normalization": "user-supplied Jordan basis"})
            pos += k
        method = {"construction": "Jordan basis", "nu": nu}

    scale = max(1.0, np.abs(g11).max(), np.abs(g22).max(), np.abs(g12).max())
    for g in (g11, g12, g22):
        if np.abs(g.imag).max() > tol * scale * 1e3:
            raise ValidationError("critical covariance has a non-negligible imaginary part")
    G = _assemble(g11.real, g12.real, g22.real)
    return CovarianceReport(gamma=G, regime=CRITICAL, method=method, critical_metadata=meta)


def theoretical_gamma(S, noise, quad_tol=1e-10, **kw):
    if S.regime == SUBCRITICAL:
        return gamma_subcritical(S, noise, quad_tol=quad_tol)
    if S.regime == CRITICAL:
        return gamma_critical(S, noise, **kw)
    raise SupercriticalUnsupported("no covariance for rho > 1/2")


def check_report_invariants(report, tol=1e-9):
    """Transpose symmetry, null direction of ``N`` and PSD-ness; returns a dict of booleans."""
    d = report.dim
    one = np.ones(d)
    scale = max(1.0, np.abs(report.gamma).max())
    return {
        "symmetric_blocks": bool(np.abs(report.g21 - report.g12.T).max() <= 1e-10 * scale),
        "n_null_direction": bool(np.abs(report.g22 @ one).max() <= tol * scale),
        "cross_null_direction": bool(np.abs(report.g12 @ one).max() <= tol * scale),
        "psd": is_psd(report.gamma, tol),
    }


# ---------------------------------------------------------------------------
# two-arm closed forms

@dataclass(frozen=True)
class RpwAsymptotics:
    p1: float
    p2: float
    a1: float
    a2: float
    v: tuple
    rho: float
    regime: str
    sigma1_sq: float
    sigma2_sq: float
    sigma11: float = None
    sigma12: float = None
    sigma22: float = None
    sigma_tilde_sq: float = None

    @property
    def scaled_covariance(self):
        """``(Y, Y), (Y, N), (N, N)`` entries of the limit law of the first components."""
        if self.regime == SUBCRITICAL:
            return self.sigma11, self.sigma12, self.sigma22
        s = self.sigma_tilde_sq
        return s, 2 * s, 4 * s

    def to_dict(self):
        out = {k: getattr(self, k) for k in
               ("p1", "p2", "a1", "a2", "rho", "regime", "sigma1_sq", "sigma2_sq")}
        out["v"] = list(self.v)
        if self.regime == SUBCRITICAL:
            out.update(sigma11=self.sigma11, sigma12=self.sigma12, sigma22=self.sigma22)
        else:
            out["sigma_tilde_sq"] = self.sigma_tilde_sq
        out["scaled_covariance"] = list(self.scaled_covariance)
        return out


def rpw_closed_forms(p1, p2, a1=None, a2=None, tol=1e-9):
    """Closed-form asymptotics of the generalized play-the-winner rule.

    ``a1, a2`` are the response variances ``Var d_k(xi)``; the default is
    the dichotomous value ``p_k q_k``.
    """
    for name, p in (("p1", p1), ("p2", p2)):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{name}={p} outside [0, 1]")
    q1, q2 = 1.0 - p1, 1.0 - p2
    a1 = p1 * q1 if a1 is None else float(a1)
    a2 = p2 * q2 if a2 is None else float(a2)
    if a1 < 0 or a2 < 0:
        raise ValidationError("response variances must be non-negative")
    qs = q1 + q2
    if not qs > 0:
        raise ValidationError("q1 + q2 must be positive (H = I has no simple Perron root)")
    rho = p1 - q2
    v = (q2 / qs, q1 / qs)
    s1 = q1 * q2 / qs**2
    g = a1 * q2 + a2 * q1
    s2 = g / qs
    if rho > 0.5 + tol:
        raise SupercriticalUnsupported(f"rho={rho:.6g} > 1/2")
    if abs(rho - 0.5) <= tol:
        return RpwAsymptotics(p1, p2, a1, a2, v, rho, CRITICAL, s1, s2,
                              sigma_tilde_sq=q1 * q2 + 2.0 * g)
    den = (1.0 - 2.0 * rho) * qs**2
    return RpwAsymptotics(
        p1, p2, a1, a2, v, rho, SUBCRITICAL, s1, s2,
        sigma11=(rho**2 * q1 * q2 + qs * g) / den,
        sigma12=(rho * q1 * q2 + g) / den,
        sigma22=(q1 * q2 + 2.0 * g) / den,
    )
