"""
VAR design matrices and closed-form coarsened (tempered) posteriors under the
natural-conjugate Normal-inverse-Wishart prior.

Tempering the Gaussian likelihood by ``zeta`` is the same as feeding the
standard conjugate update the sufficient statistics ``zeta X'X``,
``zeta X'Y``, ``zeta Y'Y`` with effective sample size ``zeta T``. Every
function here is pure; the joint coefficient covariance ``Sigma (x) V_bar``
is only ever handled through its two factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import linalg
from scipy.special import multigammaln

if TYPE_CHECKING:
    from cbvar.priors import PriorSpec

LOG_PI = math.log(math.pi)


class NumericalError(ArithmeticError):
    """A matrix that must be positive definite is not."""


@dataclass(frozen=True)
class VarDesign:
    """Stacked regression form ``Y = X A + E`` of a VAR(p).

    Row t of ``X`` is ``(1, y'_{t-1}, ..., y'_{t-p})``. ``data`` keeps the
    source series (including the p pre-sample rows) for prior construction.
    """

    Y: np.ndarray
    X: np.ndarray
    p: int
    var_names: tuple[str, ...]
    data: np.ndarray

    @property
    def T_effective(self) -> int:
        return self.Y.shape[0]

    @property
    def M(self) -> int:
        return self.Y.shape[1]

    @property
    def K(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LearningRate:
    alpha: float
    zeta: float
    T: int


@dataclass(frozen=True)
class CoarsenedPosterior:
    """Posterior ``A | Sigma ~ MN(A_bar, V_bar, Sigma)``, ``Sigma ~ IW(df, S_bar)``."""

    A_bar: np.ndarray
    V_bar: np.ndarray
    S_bar: np.ndarray
    df: float
    zeta: float
    lam: float
    p: int = 0
    jittered: bool = False

    @property
    def M(self) -> int:
        return self.S_bar.shape[0]

    @property
    def K(self) -> int:
        return self.A_bar.shape[0]

    @property
    def Sigma_mean(self) -> np.ndarray:
        denom = self.df - self.M - 1
        if denom <= 0:
            raise NumericalError(
                f"posterior mean of Sigma undefined: df={self.df} <= M+1={self.M + 1}"
            )
        return self.S_bar / denom


@dataclass(frozen=True)
class FitComplexity:
    alpha: float
    mf: float
    mc: int
    tau: float = 0.01


def build_design(data, p: int, var_names: Sequence[str] | None = None) -> VarDesign:
    """Build ``(Y, X)`` from a :class:`~cbvar.dataio.Dataset` or T x M array."""
    if p < 1 or int(p) != p:
        raise ValueError(f"lag order must be a positive integer, got {p}")
    p = int(p)
    dates = None
    if hasattr(data, "values") and hasattr(data, "names"):
        values = np.asarray(data.values, dtype=float)
        var_names = tuple(data.names)
        dates = data.dates
    else:
        values = np.asarray(data, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if var_names is None:
            var_names = tuple(f"y{i + 1}" for i in range(values.shape[1]))
    T, M = values.shape
    if T < p + 2:
        raise ValueError(f"too few observations: {T} rows for p={p} (need >= {p + 2})")
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        row, col = bad[0]
        when = dates[row] if dates is not None else f"row {row}"
        raise ValueError(f"missing value for {var_names[col]} at {when}")
    Y = values[p:]
    lags = [values[p - l : T - l] for l in range(1, p + 1)]
    X = np.hstack([np.ones((T - p, 1))] + lags)
    return VarDesign(Y=Y, X=X, p=p, var_names=tuple(var_names), data=values)


def learning_rate(alpha, T: int) -> LearningRate:
    """``zeta = alpha / (alpha + T)``; exactly 1 for ``alpha = inf``."""
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive or inf, got {alpha}")
    if T < 1:
        raise ValueError(f"sample size must be >= 1, got {T}")
    zeta = 1.0 if math.isinf(alpha) else alpha / (alpha + T)
    return LearningRate(alpha=alpha, zeta=zeta, T=int(T))


def _chol(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(a, lower=True)
    except linalg.LinAlgError:
        eig = np.linalg.eigvalsh((a + a.T) / 2).min()
        raise NumericalError(f"{what} is not positive definite (min eigenvalue {eig:.3e})")


def _logdet_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _chol_with_jitter(S: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cholesky of S, retried once with ``1e-10 tr(S)/M`` on the diagonal."""
    try:
        return S, linalg.cholesky(S, lower=True), False
    except linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.trace(S) / S.shape[0]
    S2 = S + jitter * np.eye(S.shape[0])
    try:
        return S2, linalg.cholesky(S2, lower=True), True
    except linalg.LinAlgError:
        eig = np.linalg.eigvalsh((S + S.T) / 2).min()
        raise NumericalError(
            f"posterior scale S_bar not positive definite after jitter (min eigenvalue {eig:.3e})"
        )


def _update(XtX, XtY, resid_fn, n_eff, prior):
    """Conjugate update from (possibly scaled) sufficient statistics.

    ``resid_fn(A)`` returns the data part of S_bar at coefficient matrix A,
    i.e. the (scaled) residual cross-product.
    """
    prior = prior.fold()
    P0 = prior.precision
    A0 = prior.A_underbar
    P = XtX + P0
    L = _chol(P, "zeta X'X + prior precision")
    V_bar = linalg.cho_solve((L, True), np.eye(P.shape[0]))
    V_bar = (V_bar + V_bar.T) / 2
    A_bar = linalg.cho_solve((L, True), XtY + P0 @ A0)
    D = A_bar - A0
    S_bar = resid_fn(A_bar) + D.T @ P0 @ D + prior.S_underbar
    S_bar = (S_bar + S_bar.T) / 2
    S_bar, _, jittered = _chol_with_jitter(S_bar)
    return A_bar, V_bar, S_bar, prior.v_underbar + n_eff, jittered, L


def coarsened_posterior(design: VarDesign, prior: "PriorSpec", rate: LearningRate) -> CoarsenedPosterior:
    """Tempered conjugate posterior.

    ``V_bar = (zeta X'X + V0^-1)^-1``, ``A_bar = V_bar (zeta X'Y + V0^-1 A0)``,
    ``S_bar = zeta Y'Y + A0' V0^-1 A0 - A_bar' V_bar^-1 A_bar + S0`` and
    ``df = v0 + zeta T``. Dummy observations carried by the prior enter
    untempered. ``S_bar`` is evaluated in the algebraically equal residual
    form ``zeta U'U + (A_bar-A0)' V0^-1 (A_bar-A0) + S0``, which cannot lose
    positive definiteness to cancellation.
    """
    X, Y, z = design.X, design.Y, rate.zeta

    def resid(A):
        U = Y - X @ A
        return z * (U.T @ U)

    A_bar, V_bar, S_bar, df, jit, _ = _update(
        z * (X.T @ X), z * (X.T @ Y), resid, z * design.T_effective, prior
    )
    return CoarsenedPosterior(
        A_bar=A_bar,
        V_bar=V_bar,
        S_bar=S_bar,
        df=df,
        zeta=z,
        lam=prior.lam,
        p=design.p,
        jittered=jit,
    )


def conjugate_posterior_from_stats(XtX, XtY, YtY, n, prior, p: int = 0) -> CoarsenedPosterior:
    """Untempered conjugate update from raw sufficient statistics.

    Feeding ``zeta``-scaled statistics and ``n = zeta T`` reproduces
    :func:`coarsened_posterior`.
    """
    XtX = np.asarray(XtX, dtype=float)
    XtY = np.asarray(XtY, dtype=float)
    YtY = np.asarray(YtY, dtype=float)

    def resid(A):
        return YtY - XtY.T @ A - A.T @ XtY + A.T @ XtX @ A

    A_bar, V_bar, S_bar, df, jit, _ = _update(XtX, XtY, resid, n, prior)
    return CoarsenedPosterior(A_bar, V_bar, S_bar, df, 1.0, prior.lam, p, jit)


def log_marginal_likelihood(design: VarDesign, prior: "PriorSpec", rate: LearningRate) -> float:
    """Log coarsened marginal likelihood of the actual data.

    ``(M/2)(log|V_bar| - log|V0|) - (df/2) log|S_bar| + (v0/2) log|S0|
    + log Gamma_M(df/2) - log Gamma_M(v0/2) - (zeta T M / 2) log pi``,
    evaluated with dummy observations folded into the prior, which equals
    ``log ML(data + dummies) - log ML(dummies)``.
    """
    folded = prior.fold()
    post = coarsened_posterior(design, folded, rate)
    return _lml_from(post, folded, rate.zeta * design.T_effective)


def _lml_from(post: CoarsenedPosterior, folded, n_eff: float) -> float:
    M = post.M
    v0 = folded.v_underbar
    logdet_V0 = -_logdet_chol(_chol(folded.precision, "prior precision"))
    logdet_V = _logdet_chol(_chol(post.V_bar, "V_bar"))
    logdet_S0 = _logdet_chol(_chol(folded.S_underbar, "prior scale S0"))
    logdet_S = _logdet_chol(_chol(post.S_bar, "S_bar"))
    return (
        0.5 * M * (logdet_V - logdet_V0)
        - 0.5 * post.df * logdet_S
        + 0.5 * v0 * logdet_S0
        + multigammaln(0.5 * post.df, M)
        - multigammaln(0.5 * v0, M)
        - 0.5 * n_eff * M * LOG_PI
    )


def gaussian_loglik(Y: np.ndarray, X: np.ndarray, A: np.ndarray, Sigma: np.ndarray) -> float:
    """Sum over rows of ``log N(y_t | x_t' A, Sigma)``."""
    L = _chol(Sigma, "Sigma")
    U = Y - X @ A
    Z = linalg.solve_triangular(L, U.T, lower=True)
    T, M = U.shape
    return float(
        -0.5 * T * M * math.log(2 * math.pi) - 0.5 * T * _logdet_chol(L) - 0.5 * np.sum(Z * Z)
    )


def fit_complexity(
    design: VarDesign, posterior: CoarsenedPosterior, rate: LearningRate, tau: float = 0.01
) -> FitComplexity:
    """Model fit at the posterior mean and the count of near-zero coefficients.

    ``mf`` uses the full, untempered sample with ``Sigma_bar = S_bar/(df-M-1)``.
    ``mc`` counts ``|a_j| < tau`` over all K*M coefficients, intercepts included.
    """
    Sigma_bar = posterior.Sigma_mean
    mf = gaussian_loglik(design.Y, design.X, posterior.A_bar, Sigma_bar)
    mc = int(np.count_nonzero(np.abs(posterior.A_bar) < tau))
    return FitComplexity(alpha=rate.alpha, mf=mf, mc=mc, tau=tau)
