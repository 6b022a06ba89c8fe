"""
Posterior simulation for the conjugate (coarsened) VAR: joint draws of
``(A, Sigma)``, multi-step predictive simulation and scoring, and recursively
identified impulse responses.

All draws are vectorized over the draw index and consume a single
``numpy.random.Generator`` in a fixed order, so outputs depend only on the
seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from cbvar.core import CoarsenedPosterior

QUANTILES = (5, 16, 50, 84, 95)
DEFAULT_HORIZONS = (1, 3, 12)
DEFAULT_DRAWS = 2000


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class PosteriorDraws:
    A_draws: np.ndarray
    Sigma_draws: np.ndarray
    Sigma_chol: np.ndarray
    seed: int | None
    source: CoarsenedPosterior | None = None

    @property
    def n_draws(self) -> int:
        return self.A_draws.shape[0]

    @property
    def M(self) -> int:
        return self.A_draws.shape[2]

    @property
    def p(self) -> int:
        return (self.A_draws.shape[1] - 1) // self.M


def bartlett_wishart_identity(rng: np.random.Generator, df: float, M: int, n: int) -> np.ndarray:
    """Lower-triangular Bartlett factors B with ``B B' ~ Wishart(df, I_M)``.

    Diagonal ``B_ii^2 ~ chi2(df - i)`` (0-based i) drawn as ``2 Gamma((df-i)/2)``
    so that real-valued ``df > M - 1`` is allowed.
    """
    shapes = 0.5 * (df - np.arange(M))
    diag = np.sqrt(2.0 * rng.standard_gamma(shapes, size=(n, M)))
    B = np.tril(rng.standard_normal((n, M, M)), k=-1)
    idx = np.arange(M)
    B[:, idx, idx] = diag
    return B


def sample_inverse_wishart(rng: np.random.Generator, df: float, scale: np.ndarray, n: int) -> np.ndarray:
    """``n`` draws of ``Sigma ~ IW(df, scale)`` (mean ``scale/(df-M-1)``)."""
    M = scale.shape[0]
    if not df > M - 1:
        raise ValueError(f"inverse-Wishart needs df > M-1 = {M - 1}, got {df}")
    C = linalg.cholesky(scale, lower=True)
    B = bartlett_wishart_identity(rng, df, M, n)
    eye = np.broadcast_to(np.eye(M), B.shape)
    Binv = np.linalg.solve(B, eye)
    G = C @ np.swapaxes(Binv, 1, 2)
    S = G @ np.swapaxes(G, 1, 2)
    return 0.5 * (S + np.swapaxes(S, 1, 2))


def sample_posterior(post: CoarsenedPosterior, n_draws: int = DEFAULT_DRAWS, seed: int | None = 0) -> PosteriorDraws:
    """Joint draws: ``Sigma ~ IW(df, S_bar)``, then
    ``A = A_bar + chol(V_bar) Z chol(Sigma)'`` with Z standard normal."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    Sig = sample_inverse_wishart(rng, post.df, post.S_bar, n_draws)
    L = np.linalg.cholesky(Sig)
    LV = linalg.cholesky(post.V_bar, lower=True)
    Z = rng.standard_normal((n_draws,) + post.A_bar.shape)
    A = post.A_bar + (LV @ Z) @ np.swapaxes(L, 1, 2)
    return PosteriorDraws(A_draws=A, Sigma_draws=Sig, Sigma_chol=L, seed=seed, source=post)


def point_draws(A: np.ndarray, Sigma: np.ndarray) -> PosteriorDraws:
    """Wrap fixed parameters as a single draw."""
    A = np.asarray(A, dtype=float)[None]
    Sigma = np.asarray(Sigma, dtype=float)[None]
    return PosteriorDraws(A, Sigma, np.linalg.cholesky(Sigma), seed=None)


# ---------------------------------------------------------------- forecasts


def _rows(table: dict, headers):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for row in table:
        w.writerow(row)
    return buf.getvalue()


@dataclass
class ForecastResult:
    horizons: tuple[int, ...]
    point: np.ndarray
    draws: dict
    var_names: tuple[str, ...] = ()
    lpl: np.ndarray | None = None
    mae_inputs: np.ndarray | None = None

    def rows(self):
        for i, h in enumerate(self.horizons):
            d = self.draws[h]
            for j, name in enumerate(self.var_names):
                yield (h, name, "median", fmt(self.point[i, j]))
                yield (h, name, "mean", fmt(d[:, j].mean()))
                yield (h, name, "sd", fmt(d[:, j].std(ddof=1) if len(d) > 1 else 0.0))
                for q in QUANTILES:
                    yield (h, name, f"q{q}", fmt(np.percentile(d[:, j], q)))

    def to_csv(self) -> str:
        return _rows(self.rows(), ["horizon", "variable", "statistic", "value"])

    def to_json(self) -> str:
        return json.dumps(
            [dict(horizon=h, variable=v, statistic=s, value=float(x)) for h, v, s, x in self.rows()],
            indent=1,
        )


def forecast(draws: PosteriorDraws, history, horizons=DEFAULT_HORIZONS, seed: int | None = 0,
             var_names=None) -> ForecastResult:
    """Simulate predictive paths, one per posterior draw.

    ``history`` holds at least p rows; the last p are used as initial lags.
    """
    horizons = tuple(int(h) for h in horizons)
    if not horizons or min(horizons) < 1:
        raise ValueError("forecast horizons must be >= 1")
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    p, M, n = draws.p, draws.M, draws.n_draws
    if history.shape[0] < p:
        raise ValueError(f"history has {history.shape[0]} rows, need p={p}")
    rng = np.random.default_rng(seed)
    H = max(horizons)
    # lags[:, 0] is the most recent observation
    lags = np.broadcast_to(history[::-1][:p], (n, p, M)).copy()
    A, L = draws.A_draws, draws.Sigma_chol
    out = {}
    for h in range(1, H + 1):
        x = np.concatenate([np.ones((n, 1)), lags.reshape(n, p * M)], axis=1)
        eta = rng.standard_normal((n, M))
        y = np.einsum("nk,nkm->nm", x, A) + np.einsum("nij,nj->ni", L, eta)
        lags[:, 1:] = lags[:, :-1]
        lags[:, 0] = y
        if h in horizons:
            out[h] = y
    point = np.array([np.median(out[h], axis=0) for h in horizons])
    if var_names is None:
        var_names = tuple(f"y{i + 1}" for i in range(M))
    return ForecastResult(horizons=horizons, point=point, draws=out, var_names=tuple(var_names))


def gaussian_lpl(draws: np.ndarray, realized: float) -> float:
    """Log N(realized | mean, var) with moments of the predictive draws."""
    mu = float(np.mean(draws))
    var = float(np.var(draws, ddof=1)) if len(draws) > 1 else 0.0
    if not var > 0:
        raise ValueError("degenerate predictive density (zero variance)")
    return -0.5 * (math.log(2 * math.pi * var) + (realized - mu) ** 2 / var)


def score_forecasts(result: ForecastResult, realized, focus_vars=None):
    """Absolute errors of the median and Gaussian-approximation LPLs.

    ``realized`` is either an array with one row per horizon in
    ``result.horizons`` or a mapping ``h -> vector``. Returns two arrays of
    shape (n_horizons, n_focus).
    """
    M = result.point.shape[1]
    focus = list(range(M)) if focus_vars is None else [
        result.var_names.index(f) if isinstance(f, str) else int(f) for f in focus_vars
    ]
    if isinstance(realized, dict):
        real = np.array([np.asarray(realized[h], dtype=float) for h in result.horizons])
    else:
        real = np.asarray(realized, dtype=float).reshape(len(result.horizons), -1)
    mae = np.empty((len(result.horizons), len(focus)))
    lpl = np.empty_like(mae)
    for i, h in enumerate(result.horizons):
        for k, j in enumerate(focus):
            r = real[i, j]
            if not np.isfinite(r):
                raise ValueError(f"no realized value for horizon {h}, variable {j}")
            mae[i, k] = abs(result.point[i, j] - r)
            lpl[i, k] = gaussian_lpl(result.draws[h][:, j], r)
    result.lpl = lpl
    result.mae_inputs = real
    return mae, lpl


# -------------------------------------------------------- impulse responses


def companion(A: np.ndarray, p: int) -> np.ndarray:
    """Companion matrices of stacked K x M coefficient arrays (intercept dropped).

    ``A`` may carry a leading draw axis.
    """
    A = np.asarray(A)
    batched = A.ndim == 3
    if not batched:
        A = A[None]
    n, K, M = A.shape
    F = np.zeros((n, M * p, M * p))
    F[:, :M, :] = np.swapaxes(A[:, 1 : 1 + M * p, :], 1, 2)
    if p > 1:
        F[:, M:, : M * (p - 1)] = np.eye(M * (p - 1))
    return F if batched else F[0]


def impulse_responses(draws: PosteriorDraws, H: int, shocks=None) -> np.ndarray:
    """Per-draw responses, shape (n, H+1, M, n_shocks).

    Impact is the chosen columns of lower ``chol(Sigma)``; the response at h
    is the top M rows of ``F^h`` applied to the stacked impact.
    """
    if H < 0:
        raise ValueError("horizon must be >= 0")
    M, p, n = draws.M, draws.p, draws.n_draws
    shocks = list(range(M)) if shocks is None else list(shocks)
    for j in shocks:
        if not 0 <= j < M:
            raise ValueError(f"shock index {j} out of range for M={M}")
    F = companion(draws.A_draws, p)
    state = np.zeros((n, M * p, len(shocks)))
    state[:, :M, :] = draws.Sigma_chol[:, :, shocks]
    out = np.empty((n, H + 1, M, len(shocks)))
    out[:, 0] = state[:, :M]
    for h in range(1, H + 1):
        state = F @ state
        out[:, h] = state[:, :M]
    return out


@dataclass
class IrfSet:
    horizons: np.ndarray
    shock_index: int
    quantiles: np.ndarray
    draws_used: int
    var_names: tuple[str, ...] = ()
    levels: tuple[int, ...] = QUANTILES
    responses: np.ndarray | None = field(default=None, repr=False)

    def quantile(self, q: int) -> np.ndarray:
        return self.quantiles[self.levels.index(q)]

    def rows(self):
        for h in self.horizons:
            for j, name in enumerate(self.var_names):
                for k, q in enumerate(self.levels):
                    yield (int(h), name, f"q{q}", fmt(self.quantiles[k, h, j]))

    def to_csv(self) -> str:
        return _rows(self.rows(), ["horizon", "variable", "statistic", "value"])

    def to_json(self) -> str:
        return json.dumps(
            {
                "shock_index": self.shock_index,
                "draws_used": self.draws_used,
                "rows": [dict(horizon=h, variable=v, statistic=s, value=float(x))
                         for h, v, s, x in self.rows()],
            },
            indent=1,
        )


def irf(draws: PosteriorDraws, shock_index: int, H: int, p: int | None = None,
        var_names=None, keep_draws: bool = False) -> IrfSet:
    """Cross-draw {5,16,50,84,95} percentiles of responses to one shock."""
    if p is not None and p != draws.p:
        raise ValueError(f"lag order {p} does not match draws (p={draws.p})")
    resp = impulse_responses(draws, H, [shock_index])[..., 0]
    qs = np.percentile(resp, QUANTILES, axis=0)
    if var_names is None:
        var_names = tuple(f"y{i + 1}" for i in range(draws.M))
    return IrfSet(
        horizons=np.arange(H + 1),
        shock_index=shock_index,
        quantiles=qs,
        draws_used=draws.n_draws,
        var_names=tuple(var_names),
        responses=resp if keep_draws else None,
    )
