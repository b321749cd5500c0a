"""Acquisition functions: expected improvement and entropy search.

Entropy search keeps a discrete belief ``p_min`` over a set of representer
points (sampled where EI is large), measures what is known about the
minimizer by the relative entropy of that belief against the uniform
distribution, and scores a candidate by the expected increase of that
quantity after a hypothetical evaluation there.

Fantasized updates use pathwise conditioning: joint posterior draws over
the representers are shifted by ``cov(f_r, f_x) / s_x * (y - f_x - eps)``
for each fantasy outcome ``y``.  The same draws are reused for every
candidate, which makes the acquisition a deterministic function of the
candidate for a fixed seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, optimize
from scipy.special import ndtr

from .gp import JITTER, GpPosterior, IllConditionedModel

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def ei(mu, sigma, eta):
    """Expected improvement E[max(0, eta - J)] for J ~ N(mu, sigma^2).

    Vectorized; at ``sigma == 0`` the continuous limit ``max(0, eta - mu)``.
    """
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    imp = eta - mu
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    if np.any(pos):
        s = sigma[pos]
        z = imp[pos] / s
        out = np.array(out, dtype=float)
        out[pos] = imp[pos] * ndtr(z) + s * np.exp(-0.5 * z * z) / _SQRT_2PI
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class PminGrid:
    points: np.ndarray  # (n, d) encoded representers
    mass: np.ndarray  # (n,)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.mass = np.asarray(self.mass, dtype=float)
        if len(self.points) != len(self.mass) or len(self.mass) == 0:
            raise ValueError("p_min grid needs one mass value per point")
        if np.any(self.mass < 0) or abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError("p_min mass must be a probability vector")

    def __len__(self):
        return len(self.mass)

    @classmethod
    def uniform(cls, points) -> "PminGrid":
        points = np.atleast_2d(points)
        return cls(points, np.full(len(points), 1.0 / len(points)))


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "ES"  # "EI" or "ES"
    n_representers: int = 200
    n_function_samples: int = 400
    n_starts: int = 20
    n_fantasies: int = 9  # Gauss-Hermite nodes over the fantasy outcome
    fantasy: str = "quadrature"  # or "montecarlo"
    n_local: int = 3  # local searches from the best candidates
    local_maxiter: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("EI", "ES"):
            raise ValueError("acquisition kind must be 'EI' or 'ES'")
        if self.fantasy not in ("quadrature", "montecarlo"):
            raise ValueError("fantasy must be 'quadrature' or 'montecarlo'")
        for name in ("n_representers", "n_function_samples", "n_starts", "n_fantasies",
                     "n_local", "local_maxiter"):
            if getattr(self, name) < 1:
                raise ValueError(f"acquisition.{name} must be >= 1")


def _entropy_rows(mass: np.ndarray) -> np.ndarray:
    """KL divergence to uniform along the last axis, 0 log 0 = 0."""
    n = mass.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mass > 0, mass * np.log(mass * n), 0.0)
    return np.sum(terms, axis=-1)


def relative_entropy(grid: PminGrid | np.ndarray) -> float:
    """KL(p_min || uniform) = sum p log(p n); 0 for uniform, log n for a delta."""
    mass = grid.mass if isinstance(grid, PminGrid) else np.asarray(grid, dtype=float)
    return float(max(_entropy_rows(mass), 0.0))


def _joint_cholesky(cov: np.ndarray, scale: float) -> np.ndarray:
    """Cholesky factor of a posterior covariance with escalating jitter."""
    n = len(cov)
    jitter = JITTER * scale
    for _ in range(5):
        try:
            return linalg.cholesky(cov + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise IllConditionedModel("joint posterior covariance over the representers is degenerate")


def _argmin_counts(F: np.ndarray, n: int) -> np.ndarray:
    """Share of draws whose minimum falls on each point, for draws laid out
    ``(..., S, n)`` (argmin along the last, contiguous axis)."""
    idx = np.argmin(F, axis=-1)
    lead = idx.shape[:-1]
    flat = idx.reshape(-1, idx.shape[-1])
    offset = (np.arange(flat.shape[0]) * n)[:, None]
    counts = np.bincount((flat + offset).ravel(), minlength=flat.shape[0] * n)
    return (counts.reshape(flat.shape[0], n) / idx.shape[-1]).reshape(*lead, n)


def _joint_draws(post: GpPosterior, points: np.ndarray, n_samples: int, rng):
    mu = post.mean(points)
    cov = post.cov(points)
    L = _joint_cholesky(cov, post.kernel.signal_std**2)
    E = rng.standard_normal((len(points), n_samples))
    return mu, L, E, mu[:, None] + L @ E


def es_pmin(post: GpPosterior, grid: PminGrid, n_samples: int, seed) -> PminGrid:
    """Belief over the minimizer: share of joint posterior draws over the
    representers whose minimum falls on each point."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    *_, F = _joint_draws(post, grid.points, n_samples, rng)
    return PminGrid(grid.points, _argmin_counts(F.T, len(grid)))


def build_representer_grid(post: GpPosterior, n: int, seed, n_proposal: int | None = None) -> PminGrid:
    """Representers drawn without replacement from a uniform proposal with
    probability proportional to EI, so regions likely to hold the minimum get
    finer resolution.  Falls back to the uniform proposal when EI is flat."""
    if n < 2:
        raise ValueError("need at least two representers")
    rng = np.random.default_rng(seed)
    dim = post.kernel.dim
    m = max(n_proposal or 20 * n, n)
    proposal = rng.random((m, dim))
    w = None
    if len(post):
        mu, var = post.predict(proposal)
        w = ei(mu, np.sqrt(var), float(np.min(post.dataset.y)))
        total = w.sum()
        if not (total > 0 and np.isfinite(total)) or np.ptp(w) <= 1e-12 * w.max():
            w = None
        else:
            w = w / total
            # keep every point reachable so that n distinct draws always exist
            w = np.maximum(w, 1e-12)
            w /= w.sum()
    if w is None:
        idx = np.arange(n)
    else:
        idx = rng.choice(m, size=n, replace=False, p=w)
    pts = proposal[idx]
    return PminGrid.uniform(pts)


class EntropySearch:
    """Expected change in relative entropy of ``p_min`` for candidate points.

    Holds joint draws over the representers of a frozen posterior; call it
    with an ``(m, d)`` array of encoded candidates.  ``last_error`` holds the
    error bound of the most recent evaluation: by convexity of the relative
    entropy, the averaged fantasy belief lower-bounds the expectation, so
    ``alpha >= -(H(p_min) - H(mean fantasy belief))``; that gap is zero in
    exact arithmetic and otherwise measures the sampling/quadrature error.
    """

    def __init__(self, post: GpPosterior, grid: PminGrid, n_samples: int = 400,
                 n_fantasies: int = 9, seed=0, fantasy: str = "quadrature"):
        self.post = post
        self.grid = grid
        rng = np.random.default_rng(seed)
        _, self._L, self._E, F = _joint_draws(post, grid.points, n_samples, rng)
        self._xi = rng.standard_normal(n_samples)
        self._eps = rng.standard_normal(n_samples) * math.sqrt(post.hyper.effective_noise_var)
        if fantasy == "quadrature":
            nodes, weights = np.polynomial.hermite.hermgauss(n_fantasies)
            self._nodes = nodes * math.sqrt(2.0)
            self._weights = weights / math.sqrt(math.pi)
        else:
            self._nodes = rng.standard_normal(n_fantasies)
            self._weights = np.full(n_fantasies, 1.0 / n_fantasies)
        # draws stored (S, n) in single precision, ample for locating minima
        self._FT = np.ascontiguousarray(F.T, dtype=np.float32)
        self._tol = np.float32(1e-5 * max(post.kernel.signal_std, float(np.ptp(F)), 1e-12))
        self.pmin = PminGrid(grid.points, _argmin_counts(F.T, len(grid)))
        self.H = relative_entropy(self.pmin)
        self.last_error = np.zeros(0)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        post = self.post
        mu, var = post.predict(X)
        C = post.cov(self.grid.points, X)  # (n, m)
        G = linalg.solve_triangular(self._L, C, lower=True)
        alpha = np.empty(len(X))
        err = np.empty(len(X))
        for i in range(len(X)):
            alpha[i], err[i] = self._one(mu[i], var[i], C[:, i], G[:, i])
        self.last_error = err
        return alpha

    def _one(self, mu_x: float, var_x: float, c: np.ndarray, g: np.ndarray) -> tuple[float, float]:
        s = var_x + self.post.hyper.effective_noise_var
        resid = math.sqrt(max(var_x - g @ g, 0.0))
        f_x = mu_x + g @ self._E + resid * self._xi  # (S,) jointly with the representer draws
        y = mu_x + math.sqrt(s) * self._nodes  # fantasy outcomes
        shift = ((y[:, None] - f_x[None, :] - self._eps[None, :]) / s).astype(np.float32)  # (K, S)
        c32 = c.astype(np.float32)
        # Each shifted draw is linear in the shift, so a representer whose
        # value at both ends of the shift range exceeds another's worst case
        # can never be the minimum; drop those before the full expansion.
        lo_end = self._FT + shift.min(axis=0)[:, None] * c32[None, :]
        hi_end = self._FT + shift.max(axis=0)[:, None] * c32[None, :]
        bound = np.maximum(lo_end, hi_end).min(axis=1) + self._tol
        keep = np.flatnonzero((np.minimum(lo_end, hi_end) <= bound[:, None]).any(axis=0))
        F = self._FT[:, keep][None, :, :] + shift[:, :, None] * c32[keep][None, None, :]  # (K, S, n')
        q = np.zeros((len(y), len(self.grid)))
        q[:, keep] = _argmin_counts(F, len(keep))
        H_q = _entropy_rows(q)
        expected = float(self._weights @ H_q)
        q_bar = self._weights @ q
        gap = max(self.H - relative_entropy(q_bar / q_bar.sum()), 0.0)
        return expected - self.H, gap + 1e-12


def es_expected_dH(post: GpPosterior, x, grid: PminGrid, cfg: AcquisitionConfig) -> tuple[float, float]:
    """(alpha, error bound) of entropy search at a single candidate."""
    es = EntropySearch(post, grid, cfg.n_function_samples, cfg.n_fantasies, cfg.seed, cfg.fantasy)
    alpha = es(np.atleast_2d(x))
    return float(alpha[0]), float(es.last_error[0])


class ExpectedImprovement:
    def __init__(self, post: GpPosterior, eta: float | None = None):
        self.post = post
        if eta is None:
            eta = float(np.min(post.dataset.y)) if len(post) else post.hyper.prior_mean
        self.eta = eta

    def __call__(self, X) -> np.ndarray:
        mu, var = self.post.predict(np.atleast_2d(X))
        return ei(mu, np.sqrt(var), self.eta)


def _pick(X: np.ndarray, values: np.ndarray, tiebreak) -> int:
    vmax = np.max(values)
    tol = 1e-12 * max(1.0, abs(vmax))
    tied = np.flatnonzero(values >= vmax - tol)
    if len(tied) == 1:
        return int(tied[0])
    secondary = tiebreak(X[tied]) if tiebreak is not None else np.zeros(len(tied))
    # lexsort: last key is primary
    keys = [X[tied, j] for j in range(X.shape[1] - 1, -1, -1)] + [secondary]
    return int(tied[np.lexsort(keys)[0]])


def _local_search(fun: Callable, x0: np.ndarray, method: str, maxiter: int):
    bounds = [(0.0, 1.0)] * len(x0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method == "L-BFGS-B":
            res = optimize.minimize(fun, x0, method="L-BFGS-B", bounds=bounds,
                                    options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10})
        else:
            res = optimize.minimize(fun, x0, method="Nelder-Mead", bounds=bounds,
                                    options={"maxfev": maxiter, "xatol": 1e-9, "fatol": 1e-14,
                                             "initial_simplex": _simplex(x0)})
    return np.clip(res.x, 0.0, 1.0)


def _simplex(x0: np.ndarray, step: float = 0.05) -> np.ndarray:
    pts = [x0]
    for j in range(len(x0)):
        p = x0.copy()
        p[j] = p[j] + step if p[j] + step <= 1.0 else p[j] - step
        pts.append(p)
    return np.array(pts)


def maximize_acquisition(acq: Callable[[np.ndarray], np.ndarray], dim: int, n_starts: int, seed,
                         extra_points=None, tiebreak=None, n_local: int | None = None,
                         method: str = "L-BFGS-B", maxiter: int = 200) -> tuple[np.ndarray, float]:
    """Maximize ``acq`` over the unit cube.

    Candidates are ``n_starts`` seeded uniform points plus ``extra_points``
    (e.g. the representers).  Local searches run from the best ``n_local``
    candidates (all uniform starts if ``None``).  Ties go to the lowest
    ``tiebreak`` value (posterior mean), then to the lexicographically
    smallest point.
    """
    rng = np.random.default_rng(seed)
    starts = rng.random((n_starts, dim))
    X = starts if extra_points is None else np.vstack([starts, np.atleast_2d(extra_points)])
    values = np.asarray(acq(X), dtype=float)
    values = np.where(np.isfinite(values), values, -np.inf)
    if n_local is None:
        seeds = np.arange(n_starts)
    else:
        seeds = np.argsort(-values, kind="stable")[:n_local]

    def neg(x):
        v = float(acq(x[None, :])[0])
        return -v if math.isfinite(v) else math.inf

    found, found_v = [], []
    for i in seeds:
        x = _local_search(neg, X[i].copy(), method, maxiter)
        found.append(x)
        found_v.append(-neg(x))
    if found:
        X = np.vstack([X, np.array(found)])
        values = np.concatenate([values, found_v])
    i = _pick(X, values, tiebreak)
    return np.clip(X[i], 0.0, 1.0), float(values[i])


def estimate_incumbent(post: GpPosterior, n_starts: int, seed, maxiter: int = 200,
                       n_local: int = 5) -> np.ndarray:
    """Minimizer of the posterior mean.  The observed inputs join the seeded
    uniform starts; local descents run from the ``n_local`` lowest."""
    dim = post.kernel.dim
    rng = np.random.default_rng(seed)
    starts = rng.random((n_starts, dim))
    if len(post):
        starts = np.vstack([starts, post.dataset.X])
    values = post.mean(starts)

    def mean(x):
        return float(post.mean(x[None, :])[0])

    order = np.argsort(values, kind="stable")[:n_local]
    X = [_local_search(mean, starts[i].copy(), "L-BFGS-B", maxiter) for i in order]
    X = np.vstack([starts, np.array(X)]) if X else starts
    i = _pick(X, -post.mean(X), None)
    return X[i]
