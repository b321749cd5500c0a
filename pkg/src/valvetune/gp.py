"""Exact Gaussian-process regression on the encoded tuning cube.

Supports four stationary ARD kernels (squared exponential, rational
quadratic, Matern 5/2, gamma exponential), a constant prior mean and
i.i.d. Gaussian observation noise.  Hyperparameters are either fixed (named
profiles) or fitted by maximizing the log marginal likelihood.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .paramspace import Bounds, default_bounds

log = logging.getLogger(__name__)

FAMILIES = ("se", "rq", "matern52", "gammaexp")
JITTER = 1e-10  # relative to signal variance
NOISE_FLOOR = 1e-6  # relative to signal std


class IllConditionedModel(np.linalg.LinAlgError):
    """The Gram matrix could not be factorized; usually bad hyperparameters."""


@dataclass(frozen=True)
class KernelSpec:
    family: str
    lengthscales: tuple[float, ...]
    signal_std: float
    alpha: float | None = None  # rational quadratic shape
    gamma: float | None = None  # gamma exponential power, in (0, 2]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))
        if any(not l > 0 for l in self.lengthscales) or not self.signal_std > 0:
            raise ValueError("kernel lengthscales and signal_std must be positive")
        if (self.family == "rq") != (self.alpha is not None):
            raise ValueError("alpha is required for, and only for, the rq family")
        if (self.family == "gammaexp") != (self.gamma is not None):
            raise ValueError("gamma is required for, and only for, the gammaexp family")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.gamma is not None and not 0 < self.gamma <= 2:
            raise ValueError("gamma must lie in (0, 2]")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def __call__(self, X1, X2) -> np.ndarray:
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        if X1.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise ValueError(f"kernel expects {self.dim}-dimensional inputs, "
                             f"got {X1.shape[1]} and {X2.shape[1]}")
        ls = np.asarray(self.lengthscales)
        # direct differences: the expanded form cancels to ~1e-16 instead of
        # 0 for coincident points, which r**gamma amplifies for gamma < 1
        r2 = cdist(X1 / ls, X2 / ls, "sqeuclidean")
        var = self.signal_std**2
        if self.family == "se":
            return var * np.exp(-0.5 * r2)
        if self.family == "rq":
            return var * (1.0 + r2 / (2.0 * self.alpha)) ** (-self.alpha)
        r = np.sqrt(r2)
        if self.family == "matern52":
            s5r = math.sqrt(5.0) * r
            return var * (1.0 + s5r + 5.0 / 3.0 * r2) * np.exp(-s5r)
        return var * np.exp(-(r**self.gamma))

    def diag(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.signal_std**2)


def kernel_eval(k: KernelSpec, x, x2) -> float:
    return float(k(np.atleast_2d(x), np.atleast_2d(x2))[0, 0])


@dataclass(frozen=True)
class GpHyper:
    kernel: KernelSpec
    noise_std: float
    prior_mean: float = 0.0

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")

    @property
    def effective_noise_var(self) -> float:
        floor = NOISE_FLOOR * self.kernel.signal_std
        return max(self.noise_std, floor) ** 2

    def to_dict(self) -> dict:
        k = self.kernel
        out = {"family": k.family, "lengthscales": list(k.lengthscales),
               "signal_std": k.signal_std, "noise_std": self.noise_std,
               "prior_mean": self.prior_mean}
        if k.alpha is not None:
            out["alpha"] = k.alpha
        if k.gamma is not None:
            out["gamma"] = k.gamma
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyper":
        kernel = KernelSpec(family=d["family"], lengthscales=tuple(d["lengthscales"]),
                            signal_std=float(d["signal_std"]), alpha=d.get("alpha"),
                            gamma=d.get("gamma"))
        return cls(kernel=kernel, noise_std=float(d["noise_std"]),
                   prior_mean=float(d.get("prior_mean", 0.0)))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, d) encoded inputs
    y: np.ndarray  # (n,) observed costs

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            X = X.reshape(len(y), -1)
        if len(X) != len(y):
            raise ValueError("dataset inputs and targets differ in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0))

    def __len__(self):
        return len(self.y)

    def append(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        X = np.vstack([self.X.reshape(-1, x.shape[1]), x])
        return Dataset(X, np.append(self.y, y))


def gram(hyper: GpHyper, X: np.ndarray) -> np.ndarray:
    """Gram matrix including observation noise and the jitter term."""
    K = hyper.kernel(X, X)
    K[np.diag_indices_from(K)] += hyper.effective_noise_var + JITTER * hyper.kernel.signal_std**2
    return K


def _cholesky(K: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(K, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedModel(f"Gram matrix is not positive definite: {exc}") from exc


class GpPosterior:
    """Posterior given a dataset and fixed hyperparameters.

    The Cholesky factor and the weights K^-1 z are computed once at
    construction, so every prediction costs one kernel evaluation per data
    point plus a triangular solve for the variance.
    """

    def __init__(self, dataset: Dataset, hyper: GpHyper):
        self.dataset = dataset
        self.hyper = hyper
        self.kernel = hyper.kernel
        if len(dataset):
            self._L = _cholesky(gram(hyper, dataset.X))
            z = dataset.y - hyper.prior_mean
            self._w = linalg.cho_solve((self._L, True), z)
        else:
            self._L = np.empty((0, 0))
            self._w = np.empty(0)

    def __len__(self):
        return len(self.dataset)

    def _solve_L(self, Kxd: np.ndarray) -> np.ndarray:
        return linalg.solve_triangular(self._L, Kxd.T, lower=True)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the latent function at ``X`` (n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        prior_var = self.kernel.diag(X)
        if not len(self):
            return np.full(len(X), self.hyper.prior_mean), prior_var
        Kxd = self.kernel(X, self.dataset.X)
        mean = self.hyper.prior_mean + Kxd @ self._w
        V = self._solve_L(Kxd)
        var = prior_var - np.sum(V**2, axis=0)
        return mean, np.maximum(var, 0.0)

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not len(self):
            return np.full(len(X), self.hyper.prior_mean)
        return self.hyper.prior_mean + self.kernel(X, self.dataset.X) @ self._w

    def cov(self, Xa, Xb=None) -> np.ndarray:
        """Joint posterior covariance between the latent values at ``Xa`` and ``Xb``."""
        Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
        Xb = Xa if Xb is None else np.atleast_2d(np.asarray(Xb, dtype=float))
        prior = self.kernel(Xa, Xb)
        if not len(self):
            return prior
        Va = self._solve_L(self.kernel(Xa, self.dataset.X))
        Vb = Va if Xb is Xa else self._solve_L(self.kernel(Xb, self.dataset.X))
        return prior - Va.T @ Vb

    def condition(self, x, y: float) -> "GpPosterior":
        return GpPosterior(self.dataset.append(x, y), self.hyper)


def log_marginal_likelihood(dataset: Dataset, hyper: GpHyper) -> float:
    n = len(dataset)
    if n == 0:
        raise ValueError("log marginal likelihood needs at least one observation")
    L = _cholesky(gram(hyper, dataset.X))
    z = dataset.y - hyper.prior_mean
    a = linalg.solve_triangular(L, z, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi))


# -- hyperparameter fitting --------------------------------------------------

@dataclass(frozen=True)
class HyperBox:
    """Search box for maximum-likelihood fitting (searched in log space)."""

    lengthscale: tuple[float, float] = (0.02, 2.0)
    signal_std: tuple[float, float] = (1e-4, 10.0)
    noise_std: tuple[float, float] = (1e-5, 1.0)
    alpha: tuple[float, float] = (0.05, 100.0)
    gamma: tuple[float, float] = (0.2, 2.0)

    def contains(self, hyper: GpHyper, rtol: float = 1e-9) -> bool:
        def inside(v, lim):
            return lim[0] * (1 - rtol) <= v <= lim[1] * (1 + rtol)
        k = hyper.kernel
        ok = all(inside(l, self.lengthscale) for l in k.lengthscales)
        ok &= inside(k.signal_std, self.signal_std) and inside(hyper.noise_std, self.noise_std)
        if k.alpha is not None:
            ok &= inside(k.alpha, self.alpha)
        if k.gamma is not None:
            ok &= inside(k.gamma, self.gamma)
        return bool(ok)


@dataclass(frozen=True)
class FitResult:
    hyper: GpHyper
    log_likelihood: float
    fallback: bool = False  # True when no start produced a usable likelihood


def _unpack(theta, family: str, dim: int, prior_mean: float) -> GpHyper:
    e = np.exp(theta)
    extra = {}
    if family == "rq":
        extra["alpha"] = float(e[dim + 2])
    elif family == "gammaexp":
        extra["gamma"] = min(float(e[dim + 2]), 2.0)
    kernel = KernelSpec(family, tuple(e[:dim]), float(e[dim]), **extra)
    return GpHyper(kernel, noise_std=float(e[dim + 1]), prior_mean=prior_mean)


def _log_limits(family: str, dim: int, box: HyperBox) -> np.ndarray:
    rows = [box.lengthscale] * dim + [box.signal_std, box.noise_std]
    if family == "rq":
        rows.append(box.alpha)
    elif family == "gammaexp":
        rows.append(box.gamma)
    return np.log(np.asarray(rows, dtype=float))


def center_hyper(family: str, dim: int, box: HyperBox | None = None, prior_mean: float = 0.0) -> GpHyper:
    """Hyperparameters at the centre of the log box (used when data are too scarce to fit)."""
    limits = _log_limits(family, dim, box or HyperBox())
    return _unpack(limits.mean(axis=1), family, dim, prior_mean)


def _neg_log_likelihood(theta: np.ndarray, D: np.ndarray, y: np.ndarray, family: str,
                        m: float) -> float:
    """Negative log evidence from log-hyperparameters; ``D`` holds the
    pairwise squared coordinate differences, shape (n, n, d).  Same value as
    ``-log_marginal_likelihood`` without building kernel objects."""
    n, _, dim = D.shape
    e = np.exp(theta)
    s2 = e[dim] ** 2
    q = D @ (1.0 / e[:dim] ** 2)
    if family == "se":
        g = np.exp(-0.5 * q)
    elif family == "rq":
        alpha = e[dim + 2]
        g = (1.0 + q / (2.0 * alpha)) ** (-alpha)
    elif family == "matern52":
        r5 = np.sqrt(5.0 * q)
        g = (1.0 + r5 + 5.0 / 3.0 * q) * np.exp(-r5)
    else:
        g = np.exp(-(q ** (0.5 * min(e[dim + 2], 2.0))))
    K = s2 * g
    K[np.diag_indices(n)] += max(e[dim + 1], NOISE_FLOOR * e[dim]) ** 2 + JITTER * s2
    L = _cholesky(K)
    a = linalg.solve_triangular(L, y - m, lower=True)
    return float(0.5 * a @ a + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi))


def fit_hyperparameters(dataset: Dataset, family: str, box: HyperBox | None = None,
                        restarts: int = 5, seed: int = 0,
                        prior_mean: float | str = 0.0) -> FitResult:
    """Multistart maximum-likelihood fit with bounded Powell searches.

    The first start is the centre of the (log) box, the others are uniform in
    the log box.  ``prior_mean="empirical"`` fixes the mean to the sample
    mean of the targets.
    """
    if len(dataset) < 2:
        raise ValueError("hyperparameter fitting needs at least two observations")
    if family not in FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")
    box = box or HyperBox()
    dim = dataset.X.shape[1]
    m = float(np.mean(dataset.y)) if prior_mean == "empirical" else float(prior_mean)
    limits = _log_limits(family, dim, box)
    center = limits.mean(axis=1)
    rng = np.random.default_rng(seed)
    X, y = dataset.X, dataset.y
    D = (X[:, None, :] - X[None, :, :]) ** 2

    def nll(theta):
        try:
            val = _neg_log_likelihood(theta, D, y, family, m)
        except (IllConditionedModel, ValueError, FloatingPointError):
            return 1e25
        return val if math.isfinite(val) else 1e25

    starts = [center] + [rng.uniform(limits[:, 0], limits[:, 1]) for _ in range(max(0, restarts - 1))]
    best_x, best_f = None, math.inf
    for x0 in starts:
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            res = optimize.minimize(nll, x0, method="Powell", bounds=limits,
                                    options={"xtol": 1e-4, "ftol": 1e-8, "maxfev": 3000})
        x = np.clip(res.x, limits[:, 0], limits[:, 1])
        f = nll(x)
        if f < best_f:
            best_x, best_f = x, f
    if best_x is None or best_f >= 1e25:
        log.warning("hyperparameter fit failed from every start; using the box centre")
        return FitResult(_unpack(center, family, dim, m), -math.inf, fallback=True)
    return FitResult(_unpack(best_x, family, dim, m), -best_f)


# -- named profiles ----------------------------------------------------------

# Values fitted on the physical rig: lengthscales for T_set/T_obs in ms,
# for P1/P2 in pole units (1/s).
PROFILES = {
    "heur-ardSE": {"family": "se", "lengthscales_eng": (77.0, 13.0, 12.3, 56.7),
                   "noise_std": 1.00e-3, "signal_std": 0.084},
    "norm-ardRQ": {"family": "rq", "lengthscales_eng": (173.0, 51.0, 1.07e5, 134.0),
                   "noise_std": 3.94e-3, "signal_std": 0.244, "alpha": 0.315},
}


def encoded_lengthscales(eng: tuple[float, ...], bounds: Bounds) -> tuple[float, ...]:
    """Convert engineering-unit lengthscales to the unit cube.

    Linear dimensions (given in ms) divide by the interval width.  For
    log-encoded pole dimensions the lengthscale is linearized at the
    geometric centre |p_c| of the interval: d(log|p|) = dp / |p_c|.
    """
    out = []
    for ell, lo, hi, is_log in zip(eng, bounds.lower, bounds.upper, bounds.log_scale):
        if is_log:
            llo, lhi = math.log(abs(lo)), math.log(abs(hi))
            p_c = math.exp(0.5 * (llo + lhi))
            out.append(ell / p_c / abs(lhi - llo))
        else:
            out.append(ell * 1e-3 / (hi - lo))
    return tuple(out)


def profile_hyper(name: str, bounds: Bounds | None = None, prior_mean: float = 0.0) -> GpHyper:
    if name not in PROFILES:
        raise KeyError(f"unknown hyperparameter profile {name!r}; known: {sorted(PROFILES)}")
    p = PROFILES[name]
    ls = encoded_lengthscales(p["lengthscales_eng"], bounds or default_bounds())
    kernel = KernelSpec(p["family"], ls, p["signal_std"], alpha=p.get("alpha"))
    return GpHyper(kernel, noise_std=p["noise_std"], prior_mean=prior_mean)


def with_prior_mean(hyper: GpHyper, prior_mean: float) -> GpHyper:
    return replace(hyper, prior_mean=prior_mean)
