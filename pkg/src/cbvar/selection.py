"""
Choosing the coarsening parameter alpha from the fit/complexity curve, and a
one-call fit wrapper used by the CLI and the simulation study.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from cbvar.core import (
    CoarsenedPosterior,
    FitComplexity,
    NumericalError,
    VarDesign,
    coarsened_posterior,
    fit_complexity,
    learning_rate,
)
from cbvar.priors import DEFAULT_LAMBDA_GRID, minnesota_prior, optimize_lambda

logger = logging.getLogger(__name__)

INF = float("inf")
DEFAULT_ALPHA_GRID = (25.0, 50.0, 75.0, 100.0, 125.0, 250.0, 350.0, 500.0, 1000.0, INF)


def format_alpha(alpha) -> str:
    """``inf`` for infinity, integers without a trailing ``.0``."""
    alpha = float(alpha)
    if math.isinf(alpha):
        return "inf"
    return str(int(alpha)) if alpha == int(alpha) else repr(alpha)


def parse_alpha(text):
    """Parse ``N``, ``inf`` or ``bic`` (returned as the string ``"bic"``)."""
    t = str(text).strip().lower()
    if t == "bic":
        return "bic"
    if t in ("inf", "infinity", "∞"):
        return INF
    value = float(t)
    if not value > 0:
        raise ValueError(f"alpha must be positive, got {text}")
    return value


@dataclass
class AlphaGrid:
    values: tuple[float, ...]
    points: list[FitComplexity] = field(default_factory=list)
    lambdas: dict = field(default_factory=dict)
    posteriors: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "mf", "mc", "lambda"])
            for pt in self.points:
                w.writerow([format_alpha(pt.alpha), repr(pt.mf), pt.mc,
                            repr(self.lambdas[pt.alpha])])


@dataclass(frozen=True)
class Fit:
    posterior: CoarsenedPosterior
    alpha: float
    lam: float
    ml_curve: np.ndarray | None = None
    grid: AlphaGrid | None = None


def _check_grid(alpha_grid):
    vals = tuple(float(a) for a in alpha_grid)
    if not vals:
        raise ValueError("alpha grid is empty")
    if any(not a > 0 for a in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError("alpha grid must be positive and strictly increasing")
    return vals


def fit_at(design: VarDesign, alpha, lam="auto", lambda_grid=DEFAULT_LAMBDA_GRID,
           prior_builder=None, dummies: bool = True) -> Fit:
    """Posterior at a fixed alpha with lambda given or chosen by coarsened ML."""
    rate = learning_rate(alpha, design.T_effective)
    if prior_builder is None:
        sig = minnesota_prior(design, design.p, 1.0, dummies=False).sigma_hat

        def prior_builder(l):
            return minnesota_prior(design, design.p, l, dummies=dummies, sigma_hat=sig)

    curve = None
    if isinstance(lam, str) and lam == "auto":
        lam, curve = optimize_lambda(design, rate, lambda_grid, prior_builder=prior_builder)
    post = coarsened_posterior(design, prior_builder(float(lam)), rate)
    return Fit(posterior=post, alpha=rate.alpha, lam=float(lam), ml_curve=curve)


def evaluate_alpha_grid(design: VarDesign, prior_builder=None, lambda_grid=DEFAULT_LAMBDA_GRID,
                        alpha_grid=DEFAULT_ALPHA_GRID, tau: float = 0.01, lam="auto",
                        min_points: int = 3) -> AlphaGrid:
    """Fit at every alpha (re-optimizing lambda each time) and record MF/MC.

    Failing grid points are logged and skipped; fewer than ``min_points``
    survivors is an error (``min_points`` drops to the grid size for grids
    shorter than three).
    """
    vals = _check_grid(alpha_grid)
    out = AlphaGrid(values=vals)
    for a in vals:
        try:
            f = fit_at(design, a, lam=lam, lambda_grid=lambda_grid, prior_builder=prior_builder)
            pt = fit_complexity(design, f.posterior, learning_rate(a, design.T_effective), tau)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("alpha=%s failed: %s", format_alpha(a), exc)
            out.failures[a] = str(exc)
            continue
        out.points.append(pt)
        out.lambdas[a] = f.lam
        out.posteriors[a] = f.posterior
    if len(out.points) < min(min_points, len(vals)):
        raise NumericalError(
            f"only {len(out.points)} alpha grid points could be evaluated"
        )
    return out


def knee_distances(mf, mc) -> np.ndarray:
    """Perpendicular distances of min-max normalized (MF, MC) points to the
    chord joining the first and last point."""
    pts = np.column_stack([np.asarray(mf, dtype=float), np.asarray(mc, dtype=float)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    z = (pts - lo) / span
    a, b = z[0], z[-1]
    d = b - a
    norm = math.hypot(d[0], d[1])
    if norm == 0:
        return np.hypot(*(z - a).T)
    return np.abs(d[0] * (z[:, 1] - a[1]) - d[1] * (z[:, 0] - a[0])) / norm


def select_alpha_knee(grid: AlphaGrid | list[FitComplexity]) -> float:
    """Alpha whose normalized (MF, MC) point lies farthest from the chord.

    Ties go to the larger alpha; an (numerically) collinear curve returns inf.
    """
    points = grid.points if isinstance(grid, AlphaGrid) else list(grid)
    if len(points) < 3:
        raise ValueError(f"knee selection needs at least 3 points, got {len(points)}")
    points = sorted(points, key=lambda pt: pt.alpha)
    dist = knee_distances([pt.mf for pt in points], [pt.mc for pt in points])
    best = dist.max()
    if best <= 1e-12:
        return INF
    idx = int(np.flatnonzero(dist == best)[-1])
    return points[idx].alpha


def fit_cbvar(design: VarDesign, alpha, lam="auto", lambda_grid=DEFAULT_LAMBDA_GRID,
              alpha_grid=DEFAULT_ALPHA_GRID, prior_builder=None, tau: float = 0.01) -> Fit:
    """Fit with ``alpha`` a number, ``inf`` or ``"bic"`` (knee selection)."""
    if isinstance(alpha, str):
        alpha = parse_alpha(alpha)
    if alpha == "bic":
        grid = evaluate_alpha_grid(design, prior_builder, lambda_grid, alpha_grid, tau, lam)
        a_star = select_alpha_knee(grid)
        return Fit(posterior=grid.posteriors[a_star], alpha=a_star,
                   lam=grid.lambdas[a_star], grid=grid)
    return fit_at(design, alpha, lam, lambda_grid, prior_builder)
