"""Shared test helpers: independent oracles kept free of the package's own
solution paths (grid minimization, finite differences, brute enumeration)."""

from __future__ import annotations

import numpy as np
import pytest

from hrtrain.models import ModelParams


def phi_grid_value(dhat: np.ndarray, loss_vec: np.ndarray, r: float) -> float:
    """Independent 1-D grid minimization of the scalar dual of the
    divergence-ball worst case: phi(a) = a - exp(sum w log(a - l) - r) over
    [L, L/(1-e^-r)], refined to ~1e-9. Used as the oracle for kl_inner."""
    dhat = np.asarray(dhat, dtype=float)
    loss_vec = np.asarray(loss_vec, dtype=float)
    if r == 0.0:
        return float(dhat @ loss_vec)
    shift = min(0.0, float(loss_vec.min()))
    ell = loss_vec - shift
    L = float(ell[0])
    mask = dhat > 0
    if np.all(ell[mask] >= L - 1e-13 * max(1.0, L)):
        return L + shift
    em = np.exp(-r)
    hi = L / (1.0 - em)

    def phi(a):  # a: (m,) grid
        gap = a[:, None] - ell[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(gap > 0, np.log(np.maximum(gap, 1e-300)), -np.inf)
            t = np.where(dhat[None, :] > 0, dhat[None, :] * lg, 0.0).sum(axis=1) - r
        return a - np.exp(np.minimum(t, 700.0))

    lo_b, hi_b = L, hi
    best = np.inf
    for _ in range(4):
        grid = np.linspace(lo_b, hi_b, 4001)
        vals = phi(grid)
        k = int(np.argmin(vals))
        best = min(best, float(vals[k]))
        lo_b = grid[max(k - 1, 0)]
        hi_b = grid[min(k + 1, len(grid) - 1)]
    return best + shift


def central_diff(f, x0: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy(); xp[i] += step
        xm = x0.copy(); xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def fd_check(f, x0: np.ndarray, analytic: np.ndarray, step: float = 1e-4) -> float:
    """Max relative disagreement |analytic - fd| / (1 + |analytic|)."""
    fd = central_diff(f, x0, step)
    return float(np.max(np.abs(analytic - fd) / (1.0 + np.abs(analytic))))


def perturb_params(params: ModelParams, values: np.ndarray) -> ModelParams:
    return params.with_values(values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
