"""Parameter set, standardization and complete-data likelihood of the PSFA model.

The generative model is a linear-Gaussian state space with diagonal AR(1)
latent dynamics and unit stationary latent covariance::

    x_t = V y_t + e_t,              e_t ~ N(0, diag(sigma^2))
    y_t = Lambda y_{t-1} + w_t,     w_t ~ N(0, I - Lambda^2)
    y_1 ~ N(0, Sigma_1)

Data matrices are laid out as ``(m, T)``: one column per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

INIT_NOISE_FLOOR = 1e-4
INIT_LAMBDA = 0.5


def _frozen(a, ndim):
    # fixed C layout keeps BLAS results identical across save/load cycles
    a = np.array(a, dtype=float, order="C")
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParameters:
    """Full PSFA parameter set.

    Attributes:
        emission: ``(m, p)`` emission matrix ``V``.
        transition_diag: ``(p,)`` diagonal of ``Lambda``, each entry in [0, 1).
        obs_noise_diag: ``(m,)`` observation noise variances.
        initial_cov: ``(p, p)`` covariance of the first latent state.

    Shapes are checked at construction; value constraints are reported by
    :func:`validate`.
    """

    emission: np.ndarray
    transition_diag: np.ndarray
    obs_noise_diag: np.ndarray
    initial_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "emission", _frozen(self.emission, 2))
        object.__setattr__(self, "transition_diag", _frozen(self.transition_diag, 1))
        object.__setattr__(self, "obs_noise_diag", _frozen(self.obs_noise_diag, 1))
        object.__setattr__(self, "initial_cov", _frozen(self.initial_cov, 2))
        m, p = self.emission.shape
        if self.transition_diag.shape != (p,):
            raise ValueError(f"transition_diag must have length {p}")
        if self.obs_noise_diag.shape != (m,):
            raise ValueError(f"obs_noise_diag must have length {m}")
        if self.initial_cov.shape != (p, p):
            raise ValueError(f"initial_cov must be {p}x{p}")

    @property
    def m(self) -> int:
        return self.emission.shape[0]

    @property
    def p(self) -> int:
        return self.emission.shape[1]

    @property
    def transition(self) -> np.ndarray:
        return np.diag(self.transition_diag)

    @property
    def state_noise_diag(self) -> np.ndarray:
        """Diagonal of ``Sigma = I - Lambda^2``."""
        return 1.0 - self.transition_diag**2

    @property
    def obs_noise(self) -> np.ndarray:
        return np.diag(self.obs_noise_diag)

    def replace(self, **changes) -> "ModelParameters":
        fields = dict(
            emission=self.emission,
            transition_diag=self.transition_diag,
            obs_noise_diag=self.obs_noise_diag,
            initial_cov=self.initial_cov,
        )
        fields.update(changes)
        return ModelParameters(**fields)


def validate(params: ModelParameters) -> str | None:
    """Return a description of the first violated invariant, or ``None``."""
    lam = params.transition_diag
    if not (np.all(np.isfinite(lam)) and np.all(lam >= 0.0) and np.all(lam < 1.0)):
        return "transition_diag out of [0,1)"
    s2 = params.obs_noise_diag
    if not (np.all(np.isfinite(s2)) and np.all(s2 > 0.0)):
        return "obs_noise_diag must be positive"
    if not np.all(np.isfinite(params.emission)):
        return "emission must be finite"
    s1 = params.initial_cov
    if not np.all(np.isfinite(s1)):
        return "initial_cov must be finite"
    if np.max(np.abs(s1 - s1.T)) > 1e-10:
        return "initial_cov must be symmetric"
    if np.min(np.linalg.eigvalsh(0.5 * (s1 + s1.T))) <= 0.0:
        return "initial_cov must be positive-definite"
    return None


def require_valid(params: ModelParameters) -> ModelParameters:
    problem = validate(params)
    if problem is not None:
        raise ValueError(problem)
    return params


@dataclass(frozen=True)
class ModeStandardizer:
    """Per-variable z-scoring computed from one mode's normal data."""

    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean, 1))
        object.__setattr__(self, "stddev", _frozen(self.stddev, 1))
        if self.mean.shape != self.stddev.shape:
            raise ValueError("mean and stddev must have the same length")
        if not np.all(self.stddev > 0.0):
            raise ValueError("stddev entries must be positive")

    @classmethod
    def fit(cls, data: np.ndarray) -> "ModeStandardizer":
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] < 2:
            raise ValueError("need an (m, T) matrix with T >= 2")
        std = data.std(axis=1, ddof=1)
        flat = np.flatnonzero(std <= 0.0)
        if flat.size:
            raise ValueError(f"variable(s) {flat.tolist()} have zero variance")
        return cls(mean=data.mean(axis=1), stddev=std)

    def standardize(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            return (data - self.mean) / self.stddev
        return (data - self.mean[:, None]) / self.stddev[:, None]

    def destandardize(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            return data * self.stddev + self.mean
        return data * self.stddev[:, None] + self.mean[:, None]


def initialize(data: np.ndarray, p: int) -> ModelParameters:
    """PCA-based starting point for EM on standardized ``(m, T)`` data.

    ``V`` holds the leading ``p`` eigenvectors of the sample covariance
    scaled by the square roots of their eigenvalues, so that ``V V^T`` is the
    rank-``p`` reconstruction. Each noise variance is the residual variance
    of its variable after that reconstruction, floored at 1e-4.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be an (m, T) matrix")
    m, T = data.shape
    if not 1 <= p <= m:
        raise ValueError(f"latent dimension p={p} must lie in [1, {m}]")
    if T < 2 * p:
        raise ValueError(f"need at least {2 * p} samples for p={p}, got {T}")

    cov = data @ data.T / T
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:p]
    loadings = evecs[:, order] * np.sqrt(np.clip(evals[order], 0.0, None))
    # deterministic sign: largest-magnitude entry of each column positive
    pivots = np.argmax(np.abs(loadings), axis=0)
    signs = np.sign(loadings[pivots, np.arange(p)])
    signs[signs == 0] = 1.0
    loadings = loadings * signs

    residual = np.diag(cov) - np.sum(loadings**2, axis=1)
    return ModelParameters(
        emission=loadings,
        transition_diag=np.full(p, INIT_LAMBDA),
        obs_noise_diag=np.maximum(residual, INIT_NOISE_FLOOR),
        initial_cov=np.eye(p),
    )


def suggest_latent_dim(data: np.ndarray, explained: float = 0.9) -> int:
    """Smallest rank whose leading eigenvalues explain ``explained`` of the variance."""
    data = np.asarray(data, dtype=float)
    evals = np.sort(np.linalg.eigvalsh(data @ data.T / data.shape[1]))[::-1]
    evals = np.clip(evals, 0.0, None)
    frac = np.cumsum(evals) / np.sum(evals)
    return int(np.searchsorted(frac, explained - 1e-12) + 1)


def complete_log_likelihood(
    params: ModelParameters, data: np.ndarray, latents: np.ndarray
) -> float:
    """Joint log-density ``log P(X, Y | theta)`` for observed latents."""
    X = np.asarray(data, dtype=float)
    Y = np.asarray(latents, dtype=float)
    m, p = params.m, params.p
    if X.ndim != 2 or X.shape[0] != m:
        raise ValueError(f"data must have {m} rows")
    if Y.ndim != 2 or Y.shape[0] != p:
        raise ValueError(f"latents must have {p} rows")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("data and latents must have the same number of columns")
    T = X.shape[1]

    s2 = params.obs_noise_diag
    sig = params.state_noise_diag
    lam = params.transition_diag

    resid = X - params.emission @ Y
    emission_quad = np.sum(resid**2 / s2[:, None])

    s1_chol = np.linalg.cholesky(params.initial_cov)
    z1 = np.linalg.solve(s1_chol, Y[:, 0])
    logdet_s1 = 2.0 * np.sum(np.log(np.diag(s1_chol)))

    innov = Y[:, 1:] - lam[:, None] * Y[:, :-1]
    trans_quad = np.sum(innov**2 / sig[:, None])

    total = (
        (m + p) * T * LOG_2PI
        + (T - 1) * np.sum(np.log(sig))
        + z1 @ z1
        + T * np.sum(np.log(s2))
        + emission_quad
        + logdet_s1
        + trans_quad
    )
    return float(-0.5 * total)
