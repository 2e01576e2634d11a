"""Fisher information of the emission and transition parameters, and the
recursive importance accumulation used to anchor later modes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import SmoothedMoments
from .model import ModelParameters, _frozen


@dataclass(frozen=True)
class EwcConfig:
    eta_v: float = 1.0
    eta_lambda: float = 1.0
    lambda_prior: float = 1e-3

    def __post_init__(self):
        if self.eta_v < 0 or self.eta_lambda < 0:
            raise ValueError("eta weights must be nonnegative")
        if self.lambda_prior < 0:
            raise ValueError("lambda_prior must be nonnegative")


@dataclass(frozen=True)
class ImportanceState:
    """Quadratic-penalty anchors and weights accumulated over learned modes.

    ``omega_v`` is ``(m, m)``, ``omega_lambda`` is ``(p,)``; ``anchor_v`` and
    ``anchor_lambda`` are the optimum of the most recently absorbed mode.
    """

    omega_v: np.ndarray
    omega_lambda: np.ndarray
    anchor_v: np.ndarray
    anchor_lambda: np.ndarray
    mode_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega_v", _frozen(self.omega_v, 2))
        object.__setattr__(self, "omega_lambda", _frozen(self.omega_lambda, 1))
        object.__setattr__(self, "anchor_v", _frozen(self.anchor_v, 2))
        object.__setattr__(self, "anchor_lambda", _frozen(self.anchor_lambda, 1))
        m, p = self.anchor_v.shape
        if self.omega_v.shape != (m, m):
            raise ValueError(f"omega_v must be {m}x{m}")
        if self.omega_lambda.shape != (p,) or self.anchor_lambda.shape != (p,):
            raise ValueError(f"omega_lambda and anchor_lambda must have length {p}")
        if self.mode_count < 0:
            raise ValueError("mode_count must be nonnegative")
        if self.mode_count == 0 and (self.omega_v.any() or self.omega_lambda.any()):
            raise ValueError("a fresh importance state must have zero weights")

    @classmethod
    def fresh(cls, m: int, p: int) -> "ImportanceState":
        return cls(np.zeros((m, m)), np.zeros(p), np.zeros((m, p)), np.zeros(p), 0)

    @property
    def m(self) -> int:
        return self.anchor_v.shape[0]

    @property
    def p(self) -> int:
        return self.anchor_v.shape[1]


def emission_score(params: ModelParameters, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of ``log P(x_t | y_t)`` with respect to ``V`` (an ``(m, p)`` matrix)."""
    resid = np.asarray(x, dtype=float) - params.emission @ y
    return np.outer(resid / params.obs_noise_diag, y)


def transition_score(y_t, y_prev, lam):
    """Derivative of ``log P(y_t | y_{t-1})`` with respect to each ``lambda_i``.

    Elementwise over arrays; this is the numerator/denominator form
    ``[-l^3 + a l^2 + (1 - y_t^2 - y_prev^2) l + a] / (1 - l^2)^2`` with
    ``a = y_t * y_prev``.
    """
    y_t = np.asarray(y_t, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float)
    lam = np.asarray(lam, dtype=float)
    a = y_t * y_prev
    num = -(lam**3) + a * lam**2 + (1.0 - y_t**2 - y_prev**2) * lam + a
    return num / (1.0 - lam**2) ** 2


def _posterior_draws(moments: SmoothedMoments, n: int, rng):
    """Draw ``n`` pairwise-consistent samples of ``(y_t, y_{t-1})`` per time step.

    Returns ``(T, n, p)`` marginal draws and ``(T-1, n, 2p)`` pair draws.
    """
    T, p = moments.mean.shape
    cov = moments.cov
    marg = np.empty((T, n, p))
    for t in range(T):
        marg[t] = rng.multivariate_normal(moments.mean[t], cov[t], size=n, method="eigh")
    pairs = np.empty((max(T - 1, 0), n, 2 * p))
    for t in range(1, T):
        c = moments.cross[t - 1] - np.outer(moments.mean[t], moments.mean[t - 1])
        joint = np.block([[cov[t], c], [c.T, cov[t - 1]]])
        mean = np.concatenate([moments.mean[t], moments.mean[t - 1]])
        pairs[t - 1] = rng.multivariate_normal(mean, joint, size=n, method="eigh")
    return marg, pairs


def fim_emission(
    params: ModelParameters,
    data: np.ndarray,
    moments: SmoothedMoments,
    posterior_samples: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Empirical Fisher information for ``V`` as an ``(m, m)`` matrix.

    Averages ``G_t G_t^T`` over samples, where ``G_t`` is the emission score
    at the smoothed latent mean. With ``posterior_samples > 0`` the latent is
    instead drawn from its smoothed marginal and the outer products are
    averaged over draws as well.
    """
    X = np.asarray(data, dtype=float)
    T = X.shape[1]
    inv_s2 = 1.0 / params.obs_noise_diag
    if posterior_samples <= 0:
        Y = moments.mean  # (T, p)
        resid = (X.T - Y @ params.emission.T) * inv_s2  # (T, m)
        weighted = resid * np.sqrt(np.sum(Y**2, axis=1))[:, None]
        F = weighted.T @ weighted / T
    else:
        rng = np.random.default_rng() if rng is None else rng
        marg, _ = _posterior_draws(moments, posterior_samples, rng)
        F = np.zeros((params.m, params.m))
        for t in range(T):
            Y = marg[t]
            resid = (X[:, t][None, :] - Y @ params.emission.T) * inv_s2
            weighted = resid * np.sqrt(np.sum(Y**2, axis=1))[:, None]
            F += weighted.T @ weighted / posterior_samples
        F /= T
    return 0.5 * (F + F.T)


def fim_lambda(
    params: ModelParameters,
    moments: SmoothedMoments,
    posterior_samples: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Diagonal Fisher information for the transition coefficients, length ``p``."""
    T = moments.T
    if T < 2:
        raise ValueError("need at least two samples")
    lam = params.transition_diag
    if np.any(lam >= 1.0):
        raise ValueError("transition_diag must be below 1")
    if posterior_samples <= 0:
        Y = moments.mean
        g = transition_score(Y[1:], Y[:-1], lam[None, :])
        return np.sum(g**2, axis=0) / T
    rng = np.random.default_rng() if rng is None else rng
    _, pairs = _posterior_draws(moments, posterior_samples, rng)
    p = params.p
    g = transition_score(pairs[..., :p], pairs[..., p:], lam)
    return np.sum(np.mean(g**2, axis=1), axis=0) / T


def absorb_mode(
    state: ImportanceState,
    params: ModelParameters,
    fim_v: np.ndarray,
    fim_l: np.ndarray,
    cfg: EwcConfig,
) -> ImportanceState:
    """Fold a learned mode's Fisher information into the importance state."""
    fim_v = np.asarray(fim_v, dtype=float)
    fim_l = np.asarray(fim_l, dtype=float)
    if fim_v.shape != state.omega_v.shape or fim_l.shape != state.omega_lambda.shape:
        raise ValueError("Fisher information shapes do not match the importance state")
    if np.any(fim_l < 0):
        raise ValueError("fim_l must be nonnegative")
    if state.mode_count == 0:
        omega_v = cfg.eta_v * fim_v + cfg.lambda_prior * np.eye(state.m)
        omega_l = cfg.eta_lambda * fim_l + cfg.lambda_prior
    else:
        omega_v = state.omega_v + cfg.eta_v * fim_v
        omega_l = state.omega_lambda + cfg.eta_lambda * fim_l
    return ImportanceState(
        omega_v=0.5 * (omega_v + omega_v.T),
        omega_lambda=omega_l,
        anchor_v=params.emission,
        anchor_lambda=params.transition_diag,
        mode_count=state.mode_count + 1,
    )
