"""M-step updates and the penalized EM loop that fits one operating mode."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_sylvester

from .ewc import ImportanceState
from .inference import SmoothedMoments, forward_filter, smooth
from .model import (
    LOG_2PI,
    ModelParameters,
    ModeStandardizer,
    initialize,
    require_valid,
)

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
INITIAL_COV_FLOOR = 1e-8
LAMBDA_MAX = 1.0 - 1e-6
ROOT_IMAG_TOL = 1e-8


class NumericalError(RuntimeError):
    """EM produced a non-finite objective or parameter."""


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    rel_tol: float = 1e-6
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")


@dataclass
class FitReport:
    objective: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    warning: str | None = None


def _moment_sums(moments: SmoothedMoments):
    """Per-coordinate sums over t >= 2 used by the transition update."""
    diag_second = np.diagonal(moments.second, axis1=1, axis2=2)
    diag_cross = np.diagonal(moments.cross, axis1=1, axis2=2)
    cur = diag_second[1:].sum(axis=0)
    prev = diag_second[:-1].sum(axis=0)
    cross = diag_cross.sum(axis=0)
    return cur, cross, prev


def emission_penalty(V, importance: ImportanceState, gamma1: float) -> float:
    """``(gamma1 / 2) tr((V - V*)^T Omega_V (V - V*))``.

    The half factor makes the emission update below the exact maximizer of
    the penalized objective.
    """
    D = np.asarray(V) - importance.anchor_v
    return 0.5 * gamma1 * float(np.sum(D * (importance.omega_v @ D)))


def transition_penalty(lam, importance: ImportanceState, gamma2: float) -> float:
    d = np.asarray(lam) - importance.anchor_lambda
    return gamma2 * float(np.sum(importance.omega_lambda * d**2))


def expected_log_likelihood(
    params: ModelParameters, data: np.ndarray, moments: SmoothedMoments
) -> float:
    """Expectation of the complete log-likelihood under the smoothed posterior."""
    X = np.asarray(data, dtype=float)
    m, T = X.shape
    p = params.p
    V = params.emission
    s2 = params.obs_noise_diag
    lam = params.transition_diag
    sig = params.state_noise_diag

    S_yy = moments.second.sum(axis=0)
    S_xy = X @ moments.mean
    Vs = V / s2[:, None]
    emission = (
        np.sum(X**2 / s2[:, None])
        - 2.0 * np.sum(Vs * S_xy)
        + np.sum((V.T @ Vs) * S_yy)
    )

    s1_inv = np.linalg.inv(params.initial_cov)
    _, logdet_s1 = np.linalg.slogdet(params.initial_cov)
    first = np.sum(s1_inv * moments.second[0])

    cur, cross, prev = _moment_sums(moments)
    trans = np.sum((cur - 2.0 * lam * cross + lam**2 * prev) / sig)

    total = (
        (m + p) * T * LOG_2PI
        + (T - 1) * np.sum(np.log(sig))
        + first
        + T * np.sum(np.log(s2))
        + emission
        + logdet_s1
        + trans
    )
    return float(-0.5 * total)


def penalized_objective(
    params: ModelParameters,
    data: np.ndarray,
    moments: SmoothedMoments,
    importance: ImportanceState,
    cfg: EmConfig,
) -> float:
    """Expected complete log-likelihood minus the two importance penalties."""
    if importance.anchor_v.shape != params.emission.shape:
        raise ValueError("importance state does not match parameter dimensions")
    return (
        expected_log_likelihood(params, data, moments)
        - emission_penalty(params.emission, importance, cfg.gamma1)
        - transition_penalty(params.transition_diag, importance, cfg.gamma2)
    )


def penalized_log_likelihood(
    params: ModelParameters,
    data: np.ndarray,
    importance: ImportanceState,
    cfg: EmConfig,
) -> float:
    """Marginal ``log P(X | theta)`` minus the importance penalties.

    This is the quantity EM provably never decreases.
    """
    return (
        forward_filter(params, data).log_likelihood
        - emission_penalty(params.emission, importance, cfg.gamma1)
        - transition_penalty(params.transition_diag, importance, cfg.gamma2)
    )


def solve_emission(
    moments: SmoothedMoments,
    data: np.ndarray,
    sigma_x: np.ndarray,
    importance: ImportanceState,
    gamma1: float,
) -> np.ndarray:
    """Penalized emission update.

    Solves ``V S + gamma1 Sigma_x Omega_V V = sum_t x_t E[y_t]^T +
    gamma1 Sigma_x Omega_V V*`` for ``V``, where ``S = sum_t E[y_t y_t^T]``.
    """
    X = np.asarray(data, dtype=float)
    S = moments.second.sum(axis=0)
    S = 0.5 * (S + S.T)
    rhs = X @ moments.mean
    A = gamma1 * (np.asarray(sigma_x, dtype=float)[:, None] * importance.omega_v)
    if not A.any():
        return np.linalg.solve(S, rhs.T).T
    rhs = rhs + A @ importance.anchor_v
    V = solve_sylvester(A, S, rhs)
    resid = np.linalg.norm(A @ V + V @ S - rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if resid > 1e-10 * scale:
        # Bartels-Stewart lost accuracy; fall back to the dense vectorized system
        m, p = V.shape
        M = np.kron(S.T, np.eye(m)) + np.kron(np.eye(p), A)
        V = np.linalg.solve(M, rhs.reshape(-1, order="F")).reshape((m, p), order="F")
    return V


def update_obs_noise(moments: SmoothedMoments, data: np.ndarray, v_new: np.ndarray) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    T = X.shape[1]
    S_yy = moments.second.sum(axis=0)
    S_xy = X @ moments.mean  # (m, p)
    s2 = (
        np.sum(X**2, axis=1)
        - 2.0 * np.sum(v_new * S_xy, axis=1)
        + np.einsum("ij,jk,ik->i", v_new, S_yy, v_new)
    ) / T
    return np.maximum(s2, NOISE_FLOOR)


def update_initial_cov(moments: SmoothedMoments) -> np.ndarray:
    s1 = moments.second[0]
    s1 = 0.5 * (s1 + s1.T)
    evals, evecs = np.linalg.eigh(s1)
    if np.min(evals) >= INITIAL_COV_FLOOR:
        return s1
    evals = np.maximum(evals, INITIAL_COV_FLOOR)
    out = (evecs * evals) @ evecs.T
    return 0.5 * (out + out.T)


def lambda_objective(lam, n, cur, cross, prev, gamma_omega=0.0, anchor=0.0):
    """Per-coordinate transition objective for scalar or array ``lam``.

    ``n`` is the number of transitions, ``cur``/``cross``/``prev`` the sums
    over t >= 2 of ``E[y_t^2]``, ``E[y_t y_{t-1}]`` and ``E[y_{t-1}^2]``.
    """
    lam = np.asarray(lam, dtype=float)
    one_m = 1.0 - lam**2
    return (
        -0.5 * (n * np.log(one_m) + (cur - 2.0 * lam * cross + lam**2 * prev) / one_m)
        - gamma_omega * (lam - anchor) ** 2
    )


def lambda_polynomial(n, cur, cross, prev, gamma_omega=0.0, anchor=0.0) -> np.ndarray:
    """Quintic stationarity coefficients ``[a5, a4, a3, a2, a1, a0]``."""
    g = gamma_omega
    return np.array(
        [
            2.0 * g,
            -2.0 * g * anchor,
            n - 4.0 * g,
            4.0 * g * anchor - cross,
            2.0 * g + cur + prev - n,
            -2.0 * g * anchor - cross,
        ]
    )


def _real_roots(coeffs):
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "f")
    if c.size < 2:
        return np.empty(0)
    roots = np.roots(c)  # companion-matrix eigenvalues
    keep = np.abs(roots.imag) <= ROOT_IMAG_TOL * np.maximum(1.0, np.abs(roots))
    real = roots[keep].real
    # Newton polish against the original polynomial
    dc = np.polyder(c)
    for _ in range(3):
        d = np.polyval(dc, real)
        ok = d != 0
        real[ok] = real[ok] - np.polyval(c, real[ok]) / d[ok]
    return real


def update_lambda(
    moments: SmoothedMoments,
    importance: ImportanceState,
    gamma2: float,
    lambda_anchor: np.ndarray | None = None,
) -> np.ndarray:
    """Transition update: best admissible root of each coordinate's quintic."""
    T = moments.T
    if T < 2:
        raise ValueError("need at least two samples")
    anchor = importance.anchor_lambda if lambda_anchor is None else np.asarray(lambda_anchor)
    cur, cross, prev = _moment_sums(moments)
    n = T - 1
    out = np.empty(moments.mean.shape[1])
    for i in range(out.size):
        g = gamma2 * importance.omega_lambda[i]
        args = (n, cur[i], cross[i], prev[i], g, anchor[i])
        roots = _real_roots(lambda_polynomial(*args))
        cand = roots[(roots >= 0.0) & (roots <= LAMBDA_MAX)]
        cand = np.sort(np.concatenate([cand, [0.0, LAMBDA_MAX]]))
        vals = lambda_objective(cand, *args)
        # argmax returns the first (smallest) maximizer on ties
        out[i] = cand[int(np.argmax(vals))]
    return out


def m_step(
    params: ModelParameters,
    data: np.ndarray,
    moments: SmoothedMoments,
    importance: ImportanceState,
    cfg: EmConfig,
) -> ModelParameters:
    """Block updates in the order V, Sigma_x, Sigma_1, Lambda."""
    V = solve_emission(moments, data, params.obs_noise_diag, importance, cfg.gamma1)
    s2 = update_obs_noise(moments, data, V)
    s1 = update_initial_cov(moments)
    lam = update_lambda(moments, importance, cfg.gamma2)
    return ModelParameters(emission=V, transition_diag=lam, obs_noise_diag=s2, initial_cov=s1)


def _align_signs(V: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    signs = np.where(np.sum(V * anchor, axis=0) < 0, -1.0, 1.0)
    return V * signs


def fit_standardized(
    data: np.ndarray,
    p: int,
    importance: ImportanceState | None = None,
    cfg: EmConfig | None = None,
    init: ModelParameters | None = None,
) -> tuple[ModelParameters, FitReport]:
    """Penalized EM on already standardized ``(m, T)`` data."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an (m, T) matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    m, T = X.shape
    cfg = EmConfig() if cfg is None else cfg
    importance = ImportanceState.fresh(m, p) if importance is None else importance
    if importance.anchor_v.shape != (m, p):
        raise ValueError(f"importance state is for ({importance.m}, {importance.p}), data needs ({m}, {p})")

    if init is None:
        params = initialize(X, p)
        # the unpenalized objective is invariant to latent sign flips
        if cfg.gamma1 > 0 and importance.omega_v.any():
            params = params.replace(emission=_align_signs(params.emission, importance.anchor_v))
    else:
        params = require_valid(init)

    report = FitReport()
    moments, trace = smooth(params, X)
    obj = trace.log_likelihood - emission_penalty(
        params.emission, importance, cfg.gamma1
    ) - transition_penalty(params.transition_diag, importance, cfg.gamma2)
    report.objective.append(obj)
    best = (obj, params)

    for it in range(1, cfg.max_iters + 1):
        new = m_step(params, X, moments, importance, cfg)
        if not all(np.all(np.isfinite(a)) for a in (new.emission, new.obs_noise_diag, new.initial_cov)):
            raise NumericalError(f"non-finite parameters at EM iteration {it}")
        moments, trace = smooth(new, X)
        new_obj = (
            trace.log_likelihood
            - emission_penalty(new.emission, importance, cfg.gamma1)
            - transition_penalty(new.transition_diag, importance, cfg.gamma2)
        )
        if not np.isfinite(new_obj):
            raise NumericalError(f"non-finite objective at EM iteration {it}")
        report.objective.append(new_obj)
        report.iterations = it
        params = new
        if new_obj > best[0]:
            best = (new_obj, new)
        change = abs(new_obj - obj) / max(abs(obj), 1.0)
        obj = new_obj
        if change < cfg.rel_tol:
            report.converged = True
            break

    if not report.converged:
        report.warning = f"EM did not converge within {cfg.max_iters} iterations"
        log.warning(report.warning)
    return best[1], report


def fit_mode(
    data_raw: np.ndarray,
    importance: ImportanceState | None,
    cfg: EmConfig | None,
    p: int,
) -> tuple[ModelParameters, ModeStandardizer, FitReport]:
    """Standardize one mode's raw ``(m, T)`` data and fit it by penalized EM."""
    X = np.asarray(data_raw, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an (m, T) matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    if X.shape[1] < 2 * p:
        raise ValueError(f"need at least {2 * p} samples for p={p}")
    standardizer = ModeStandardizer.fit(X)
    params, report = fit_standardized(standardizer.standardize(X), p, importance, cfg)
    return params, standardizer, report
