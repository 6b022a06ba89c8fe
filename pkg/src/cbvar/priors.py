"""
Minnesota-type natural-conjugate prior with sum-of-coefficients and
single-unit-root dummy observations, and plug-in selection of the overall
tightness by coarsened marginal likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from cbvar.core import (
    LearningRate,
    NumericalError,
    VarDesign,
    log_marginal_likelihood,
)

logger = logging.getLogger(__name__)

INTERCEPT_VARIANCE = 1e6
DEFAULT_LAMBDA_GRID = (0.01, 0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
DUMMY_RATIO = 10.0


@dataclass(frozen=True)
class PriorSpec:
    """NIW prior ``A | Sigma ~ MN(A_underbar, V_underbar, Sigma)``,
    ``Sigma ~ IW(v_underbar, S_underbar)`` plus dummy rows.

    ``V_underbar`` is diagonal as built; after :meth:`fold` it is the full
    covariance implied by the absorbed dummies and ``V_underbar_inv`` holds
    its exact precision.
    """

    A_underbar: np.ndarray
    V_underbar: np.ndarray
    S_underbar: np.ndarray
    v_underbar: float
    lam: float = float("nan")
    kappa: float = float("inf")
    xi: float = float("inf")
    sigma_hat: np.ndarray | None = None
    dummy_Y: np.ndarray | None = None
    dummy_X: np.ndarray | None = None
    V_underbar_inv: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.A_underbar.shape[0]

    @property
    def M(self) -> int:
        return self.A_underbar.shape[1]

    @property
    def n_dummies(self) -> int:
        return 0 if self.dummy_Y is None else self.dummy_Y.shape[0]

    @property
    def precision(self) -> np.ndarray:
        if self.V_underbar_inv is not None:
            return self.V_underbar_inv
        V = self.V_underbar
        if np.count_nonzero(V - np.diag(np.diag(V))) == 0:
            d = np.diag(V)
            if np.any(d <= 0):
                raise NumericalError("prior covariance has non-positive diagonal")
            return np.diag(1.0 / d)
        try:
            c = linalg.cho_factor(V, lower=True)
        except linalg.LinAlgError:
            raise NumericalError("prior covariance V_underbar is not positive definite")
        return linalg.cho_solve(c, np.eye(V.shape[0]))

    def fold(self) -> "PriorSpec":
        """Equivalent prior with the dummy rows absorbed (untempered).

        Stacking ``(Y_d, X_d)`` above the data with unit weight gives the same
        posterior as this prior applied to the data alone.
        """
        if self.n_dummies == 0:
            return self
        Yd, Xd = self.dummy_Y, self.dummy_X
        if Xd.shape != (Yd.shape[0], self.K) or Yd.shape[1] != self.M:
            raise ValueError(
                f"dummy blocks {Yd.shape}/{Xd.shape} do not conform to K={self.K}, M={self.M}"
            )
        P0 = self.precision
        P = P0 + Xd.T @ Xd
        try:
            c = linalg.cho_factor(P, lower=True)
        except linalg.LinAlgError:
            raise NumericalError("folded prior precision is not positive definite")
        A = linalg.cho_solve(c, P0 @ self.A_underbar + Xd.T @ Yd)
        U = Yd - Xd @ A
        D = A - self.A_underbar
        S = self.S_underbar + U.T @ U + D.T @ P0 @ D
        V = linalg.cho_solve(c, np.eye(self.K))
        return replace(
            self,
            A_underbar=A,
            V_underbar=(V + V.T) / 2,
            V_underbar_inv=P,
            S_underbar=(S + S.T) / 2,
            v_underbar=self.v_underbar + Yd.shape[0],
            dummy_Y=None,
            dummy_X=None,
        )


def ar_residual_scale(y: np.ndarray, p: int) -> float:
    """Residual standard error of a least-squares AR(p) with intercept,
    using ``n - p - 1`` degrees of freedom."""
    y = np.asarray(y, dtype=float)
    n = len(y) - p
    if n <= p + 1:
        raise ValueError(f"series too short ({len(y)}) for an AR({p}) scale estimate")
    Z = np.column_stack([np.ones(n)] + [y[p - l : len(y) - l] for l in range(1, p + 1)])
    coef, *_ = np.linalg.lstsq(Z, y[p:], rcond=None)
    u = y[p:] - Z @ coef
    return math.sqrt(float(u @ u) / (n - p - 1))


def _values(data) -> np.ndarray:
    if isinstance(data, VarDesign):
        return data.data
    if hasattr(data, "values") and hasattr(data, "names"):
        return np.asarray(data.values, dtype=float)
    v = np.asarray(data, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def _names(data, M):
    if isinstance(data, VarDesign):
        return data.var_names
    if hasattr(data, "names"):
        return tuple(data.names)
    return tuple(f"y{i + 1}" for i in range(M))


def dummy_observations(mu: np.ndarray, p: int, kappa: float, xi: float):
    """Sum-of-coefficients rows (one per variable) and the single-unit-root row.

    Returns ``(Y_d, X_d)``; an infinite tightness drops its block.
    """
    M = len(mu)
    K = p * M + 1
    Ys, Xs = [], []
    if math.isfinite(kappa):
        D = np.diag(mu) / kappa
        Xsoc = np.zeros((M, K))
        Xsoc[:, 1:] = np.tile(D, (1, p))
        Ys.append(D)
        Xs.append(Xsoc)
    if math.isfinite(xi):
        row = mu / xi
        Xsur = np.empty((1, K))
        Xsur[0, 0] = 1.0 / xi
        Xsur[0, 1:] = np.tile(row, p)
        Ys.append(row[None, :])
        Xs.append(Xsur)
    if not Ys:
        return np.zeros((0, M)), np.zeros((0, K))
    return np.vstack(Ys), np.vstack(Xs)


def minnesota_prior(data, p: int, lam: float, kappa: float | None = None, xi: float | None = None,
                    dummies: bool = True, sigma_hat: np.ndarray | None = None) -> PriorSpec:
    """Random-walk Minnesota prior in conjugate form.

    Coefficient on lag ``l`` of variable ``j`` has prior variance
    ``lam^2 / (l^2 sigma_j^2)`` (times ``Sigma`` across equations), the
    intercept ``1e6``. ``S_underbar = diag(sigma^2)`` and ``v_underbar = M+2``.
    ``kappa`` and ``xi`` default to ``10 * lam``; ``dummies=False`` omits both
    dummy blocks.

    Parameters
    ----------
    data : Dataset, VarDesign or array
        Source series including the pre-sample; ``sigma_j`` is the residual
        standard error of a univariate AR(p) on it and the dummy levels are
        the means of its first p observations.
    sigma_hat : array, optional
        Use these scale estimates instead of fitting AR(p) models.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    values = _values(data)
    T, M = values.shape
    names = _names(data, M)
    if sigma_hat is None:
        sigma_hat = np.empty(M)
        for j in range(M):
            if np.ptp(values[:, j]) == 0:
                raise ValueError(f"series {names[j]} is constant; cannot scale prior")
            sigma_hat[j] = ar_residual_scale(values[:, j], p)
            if not sigma_hat[j] > 0:
                raise ValueError(f"series {names[j]} has zero AR residual variance")
    sigma_hat = np.asarray(sigma_hat, dtype=float)

    K = p * M + 1
    A0 = np.zeros((K, M))
    A0[1 : M + 1, :] = np.eye(M)
    lags = np.repeat(np.arange(1, p + 1), M)
    scale = np.tile(sigma_hat, p)
    v = np.empty(K)
    v[0] = INTERCEPT_VARIANCE
    v[1:] = lam**2 / (lags**2 * scale**2)

    kappa = DUMMY_RATIO * lam if kappa is None else float(kappa)
    xi = DUMMY_RATIO * lam if xi is None else float(xi)
    if dummies:
        mu = values[:p].mean(axis=0)
        Yd, Xd = dummy_observations(mu, p, kappa, xi)
    else:
        kappa = xi = float("inf")
        Yd, Xd = np.zeros((0, M)), np.zeros((0, K))
    return PriorSpec(
        A_underbar=A0,
        V_underbar=np.diag(v),
        S_underbar=np.diag(sigma_hat**2),
        v_underbar=float(M + 2),
        lam=float(lam),
        kappa=kappa,
        xi=xi,
        sigma_hat=sigma_hat,
        dummy_Y=Yd,
        dummy_X=Xd,
    )


def apply_dummies(design: VarDesign, prior: PriorSpec) -> PriorSpec:
    """Fold the prior's dummy rows into its moments (see :meth:`PriorSpec.fold`)."""
    if prior.K != design.K or prior.M != design.M:
        raise ValueError(
            f"prior is {prior.K}x{prior.M} but design has K={design.K}, M={design.M}"
        )
    return prior.fold()


def optimize_lambda(design: VarDesign, rate: LearningRate, grid=DEFAULT_LAMBDA_GRID,
                    dummies: bool = True, prior_builder=None):
    """Grid-maximize the coarsened marginal likelihood over lambda.

    The prior, including ``kappa = xi = 10 lambda`` dummies, is rebuilt at each
    grid point. Exact ties go to the larger lambda.

    Returns
    -------
    lambda_star : float
    ml_curve : np.ndarray
        Log marginal likelihood per grid point (NaN where evaluation failed).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be non-empty, positive and strictly increasing")
    if prior_builder is None:
        sig = minnesota_prior(design, design.p, 1.0, dummies=False).sigma_hat

        def prior_builder(lam):
            return minnesota_prior(design, design.p, lam, dummies=dummies, sigma_hat=sig)

    curve = np.full(grid.size, np.nan)
    for i, lam in enumerate(grid):
        try:
            curve[i] = log_marginal_likelihood(design, prior_builder(lam), rate)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("lambda=%g failed: %s", lam, exc)
    if np.all(np.isnan(curve)):
        raise NumericalError("marginal likelihood failed at every lambda grid point")
    best = np.nanmax(curve)
    idx = int(np.flatnonzero(curve == best)[-1])
    return float(grid[idx]), curve
