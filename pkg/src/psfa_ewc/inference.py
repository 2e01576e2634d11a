"""Kalman filtering and RTS smoothing for the PSFA state-space model (E-step)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .model import LOG_2PI, ModelParameters


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance."""


def _sym(a):
    return 0.5 * (a + a.swapaxes(-1, -2))


@dataclass(frozen=True)
class FilterTrace:
    """Forward-pass quantities, indexed by time along the first axis.

    ``predicted_cov[t]`` is the one-step predictive covariance used at time
    ``t`` (``Sigma_1`` for the first sample). ``innovation`` and
    ``innovation_cov`` are the one-step observation prediction errors and
    their covariances; ``log_likelihood`` is the marginal ``log P(X)``.
    """

    filtered_mean: np.ndarray  # (T, p)
    filtered_cov: np.ndarray  # (T, p, p)
    predicted_cov: np.ndarray  # (T, p, p)
    gain: np.ndarray  # (T, p, m)
    innovation: np.ndarray  # (T, m)
    innovation_cov: np.ndarray  # (T, m, m)
    log_likelihood: float

    @property
    def T(self) -> int:
        return self.filtered_mean.shape[0]


@dataclass(frozen=True)
class SmoothedMoments:
    """Posterior sufficient statistics given the whole sequence.

    ``mean[t] = E[y_t|X]``, ``second[t] = E[y_t y_t^T|X]`` and
    ``cross[t-1] = E[y_t y_{t-1}^T|X]`` for ``t = 1..T-1`` (0-based).
    """

    mean: np.ndarray  # (T, p)
    second: np.ndarray  # (T, p, p)
    cross: np.ndarray  # (T-1, p, p)

    @property
    def T(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.second - np.einsum("ti,tj->tij", self.mean, self.mean)


def _gain(P, V, s2):
    S = _sym(V @ P @ V.T + np.diag(s2))
    try:
        cf = cho_factor(S, lower=True)
    except LinAlgError as exc:
        raise np.linalg.LinAlgError("innovation covariance is not positive-definite") from exc
    K = cho_solve(cf, V @ P).T
    return K, S, cf


def _settled(a, b):
    # change at the level of floating-point rounding
    return np.max(np.abs(a - b)) <= _SETTLE_TOL * max(1.0, np.max(np.abs(a)))


_SETTLE_TOL = 1e-14


def forward_filter(params: ModelParameters, data: np.ndarray) -> FilterTrace:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] != params.m:
        raise ValueError(f"data must be an ({params.m}, T) matrix")
    m, T = X.shape
    p = params.p
    if T < 1:
        raise ValueError("need at least one sample")
    V = params.emission
    lam = params.transition_diag
    s2 = params.obs_noise_diag
    eye = np.eye(p)

    U = np.empty((T, p, p))
    P = np.empty((T, p, p))
    K = np.empty((T, p, m))
    S = np.empty((T, m, m))
    S_inv = np.empty((T, m, m))
    logdet = np.empty(T)

    # The covariance recursion does not depend on the data; once it reaches
    # its fixed point the remaining steps are copies.
    pred = _sym(params.initial_cov)
    t = 0
    while t < T:
        if t > 0:
            pred = _sym(lam[:, None] * (U[t - 1] - eye) * lam[None, :] + eye)
        Kt, St, cf = _gain(pred, V, s2)
        P[t], K[t], S[t] = pred, Kt, St
        U[t] = _sym((eye - Kt @ V) @ pred)
        S_inv[t] = cho_solve(cf, np.eye(m))
        logdet[t] = 2.0 * np.sum(np.log(np.diag(cf[0])))
        if t > 1 and _settled(U[t], U[t - 1]) and _settled(K[t], K[t - 1]):
            for a in (U, P, K, S, S_inv, logdet):
                a[t + 1:] = a[t]
            break
        t += 1

    mu = np.empty((T, p))
    innov = np.empty((T, m))
    prior_mean = np.zeros(p)
    for t in range(T):
        if t > 0:
            prior_mean = lam * mu[t - 1]
        e = X[:, t] - V @ prior_mean
        mu[t] = prior_mean + K[t] @ e
        innov[t] = e

    quad = np.einsum("ti,tij,tj->", innov, S_inv, innov)
    loglik = -0.5 * (T * m * LOG_2PI + np.sum(logdet) + quad)
    return FilterTrace(mu, U, P, K, innov, S, float(loglik))


def backward_smooth(params: ModelParameters, trace: FilterTrace) -> SmoothedMoments:
    mu, U, P = trace.filtered_mean, trace.filtered_cov, trace.predicted_cov
    T, p = mu.shape
    lam = params.transition_diag

    # smoother gains J_{t-1} = U_{t-1} Lambda^T P_{t-1}^{-1}, with P symmetric
    J = np.linalg.solve(P[1:], lam[:, None] * U[:-1]).swapaxes(1, 2)

    U_s = U.copy()
    for t in range(T - 1, 0, -1):
        Jt = J[t - 1]
        U_s[t - 1] = _sym(U[t - 1] + Jt @ (U_s[t] - P[t]) @ Jt.T)

    mu_s = mu.copy()
    for t in range(T - 1, 0, -1):
        mu_s[t - 1] = mu[t - 1] + J[t - 1] @ (mu_s[t] - lam * mu[t - 1])

    cross = np.einsum("tij,tkj->tik", U_s[1:], J) + np.einsum("ti,tj->tij", mu_s[1:], mu_s[:-1])
    second = U_s + np.einsum("ti,tj->tij", mu_s, mu_s)
    return SmoothedMoments(mean=mu_s, second=second, cross=cross)


def smooth(params: ModelParameters, data: np.ndarray) -> tuple[SmoothedMoments, FilterTrace]:
    """Run the full E-step and return the moments with the filter trace."""
    trace = forward_filter(params, data)
    return backward_smooth(params, trace), trace


@dataclass(frozen=True)
class SteadyState:
    gain: np.ndarray  # (p, m)
    predicted_cov: np.ndarray  # (p, p), one-step predictive
    filtered_cov: np.ndarray  # (p, p)
    iterations: int


def steady_state(
    params: ModelParameters, tol: float = 1e-10, max_iter: int = 10_000
) -> SteadyState:
    """Fixed point of the gain/covariance recursion started from ``Sigma_1``."""
    V = params.emission
    lam = params.transition_diag
    s2 = params.obs_noise_diag
    p = params.p
    eye = np.eye(p)

    pred = _sym(params.initial_cov)
    K_prev, _, _ = _gain(pred, V, s2)
    U = _sym((eye - K_prev @ V) @ pred)
    delta = np.inf
    for it in range(1, max_iter + 1):
        pred = _sym(lam[:, None] * (U - eye) * lam[None, :] + eye)
        K, _, _ = _gain(pred, V, s2)
        U = _sym((eye - K @ V) @ pred)
        delta = np.max(np.abs(K - K_prev)) if K.size else 0.0
        K_prev = K
        if delta < tol:
            return SteadyState(K, pred, U, it)
    raise ConvergenceError(
        f"steady gain did not converge after {max_iter} iterations "
        f"(last max-abs change {delta:.3e})"
    )


def steady_gain(params: ModelParameters, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    return steady_state(params, tol, max_iter).gain
