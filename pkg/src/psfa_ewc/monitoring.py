"""Online T^2 / SPE / S^2 statistics, KDE control limits and the decision rule."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from .inference import steady_state
from .model import ModelParameters, ModeStandardizer, _frozen

STATISTICS = ("T2", "SPE", "S2")
KDE_GRID_POINTS = 4096
MIN_CALIBRATION = 500
PHI_JITTER = 1e-10


class Label(str, enum.Enum):
    NORMAL = "Normal"
    STATIC_DEVIATION = "StaticDeviation"
    DYNAMIC_FAULT = "DynamicFault"


@dataclass(frozen=True)
class Decision:
    label: Label
    t2: float | None = None
    spe: float | None = None
    s2: float | None = None
    t2_flag: bool = False
    spe_flag: bool = False
    s2_flag: bool = False

    @property
    def has_statistics(self) -> bool:
        return self.t2 is not None

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.t2_flag, self.spe_flag, self.s2_flag)


def classify(t2: float, spe: float, s2: float, thresholds) -> Decision:
    """Apply the three-way monitoring rule to one set of statistics."""
    th_t2, th_spe, th_s2 = thresholds
    t2_flag, spe_flag, s2_flag = t2 > th_t2, spe > th_spe, s2 > th_s2
    if s2_flag:
        label = Label.DYNAMIC_FAULT
    elif t2_flag or spe_flag:
        label = Label.STATIC_DEVIATION
    else:
        label = Label.NORMAL
    return Decision(label, float(t2), float(spe), float(s2), bool(t2_flag), bool(spe_flag), bool(s2_flag))


def silverman_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    n = values.size
    sd = values.std(ddof=1)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    h = 0.9 * spread * n ** (-0.2)
    return h if h > 0 else max(abs(float(values.mean())), 1.0) * 1e-3


def kde_threshold(values: np.ndarray, alpha: float) -> float:
    """Upper ``1 - alpha`` quantile of a Gaussian-kernel density estimate.

    The mixture CDF is evaluated exactly on a grid spanning
    ``[min - 3h, max + 3h]`` and inverted by linear interpolation.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("need at least two values")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    h = silverman_bandwidth(values)
    grid = np.linspace(values.min() - 3 * h, values.max() + 3 * h, KDE_GRID_POINTS)
    cdf = np.zeros(KDE_GRID_POINTS)
    for chunk in np.array_split(values, max(1, values.size // 1024)):
        cdf += ndtr((grid[:, None] - chunk[None, :]) / h).sum(axis=1)
    cdf /= values.size
    target = 1.0 - alpha
    return float(np.interp(target, cdf, grid))


@dataclass(frozen=True)
class MonitoringModel:
    params: ModelParameters
    standardizer: ModeStandardizer
    steady_gain: np.ndarray  # (p, m)
    pred_err_cov: np.ndarray  # (m, m)
    dyn_cov: np.ndarray  # (p, p)
    thresholds: tuple[float, float, float]
    alpha: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "steady_gain", _frozen(self.steady_gain, 2))
        object.__setattr__(self, "pred_err_cov", _frozen(self.pred_err_cov, 2))
        object.__setattr__(self, "dyn_cov", _frozen(self.dyn_cov, 2))
        object.__setattr__(self, "thresholds", tuple(float(v) for v in self.thresholds))

    @cached_property
    def _pred_err_inv(self):
        return np.linalg.inv(self.pred_err_cov)

    @cached_property
    def _dyn_inv_diag(self):
        return 1.0 / np.diag(self.dyn_cov)

    def with_standardizer(self, standardizer: ModeStandardizer) -> "MonitoringModel":
        return MonitoringModel(
            self.params, standardizer, self.steady_gain, self.pred_err_cov,
            self.dyn_cov, self.thresholds, self.alpha,
        )


@dataclass(frozen=True)
class MonitorState:
    prev_latent: np.ndarray
    prev_filtered_mean: np.ndarray
    initialized: bool = False

    @classmethod
    def fresh(cls, p: int) -> "MonitorState":
        return cls(np.zeros(p), np.zeros(p), False)


def steady_quantities(params: ModelParameters):
    """Steady gain ``K``, prediction-error covariance ``Phi`` and ``Xi``."""
    ss = steady_state(params)
    V = params.emission
    lam = params.transition_diag
    # U is the steady filtered covariance of y_{t-1}; propagate it one step
    prop = lam[:, None] * ss.filtered_cov * lam[None, :] + np.diag(params.state_noise_diag)
    phi = V @ prop @ V.T + np.diag(params.obs_noise_diag)
    phi = 0.5 * (phi + phi.T)
    if np.min(np.linalg.eigvalsh(phi)) <= 0:
        phi = phi + PHI_JITTER * np.eye(params.m)
    xi = np.diag(2.0 * (1.0 - lam))
    return ss.gain, phi, xi


def _statistics(model: MonitoringModel, x_std: np.ndarray, y_prev: np.ndarray):
    p = model.params
    pred = p.transition_diag * y_prev
    eps = x_std - p.emission @ pred
    y = pred + model.steady_gain @ eps
    t2 = float(y @ y)
    spe = float(eps @ model._pred_err_inv @ eps)
    dy = y - y_prev
    s2 = float(np.sum(dy * dy * model._dyn_inv_diag))
    return y, t2, spe, s2


def step(model: MonitoringModel, state: MonitorState, x_raw: np.ndarray) -> tuple[Decision, MonitorState]:
    """Process one raw sample; the first call only primes the latent state."""
    x = model.standardizer.standardize(np.asarray(x_raw, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    y, t2, spe, s2 = _statistics(model, x, state.prev_latent)
    new_state = MonitorState(prev_latent=y, prev_filtered_mean=y, initialized=True)
    if not state.initialized:
        return Decision(Label.NORMAL), new_state
    return classify(t2, spe, s2, model.thresholds), new_state


def monitor_stream(model: MonitoringModel, data_raw: np.ndarray) -> list[Decision]:
    """Run :func:`step` over the columns of an ``(m, N)`` raw data matrix."""
    data_raw = np.asarray(data_raw, dtype=float)
    state = MonitorState.fresh(model.params.p)
    out = []
    for t in range(data_raw.shape[1]):
        d, state = step(model, state, data_raw[:, t])
        out.append(d)
    return out


def _raw_statistics(model_like: MonitoringModel, data_std: np.ndarray) -> np.ndarray:
    y_prev = np.zeros(model_like.params.p)
    stats = np.empty((data_std.shape[1] - 1, 3))
    for t in range(data_std.shape[1]):
        y, t2, spe, s2 = _statistics(model_like, data_std[:, t], y_prev)
        if t > 0:
            stats[t - 1] = (t2, spe, s2)
        y_prev = y
    return stats


def build_monitor(
    params: ModelParameters,
    standardizer: ModeStandardizer,
    calibration_data: np.ndarray,
    alpha: float = 0.01,
) -> MonitoringModel:
    """Steady-state monitor with KDE control limits from raw ``(m, N)`` normal data."""
    calibration_data = np.asarray(calibration_data, dtype=float)
    if calibration_data.ndim != 2 or calibration_data.shape[0] != params.m:
        raise ValueError(f"calibration data must be an ({params.m}, N) matrix")
    if calibration_data.shape[1] < MIN_CALIBRATION:
        raise ValueError(f"need at least {MIN_CALIBRATION} calibration samples")
    K, phi, xi = steady_quantities(params)
    provisional = MonitoringModel(params, standardizer, K, phi, xi, (np.inf,) * 3, alpha)
    stats = _raw_statistics(provisional, standardizer.standardize(calibration_data))
    thresholds = tuple(kde_threshold(stats[:, j], alpha) for j in range(3))
    if min(thresholds) <= 0:
        raise ValueError(f"non-positive control limit {thresholds}")
    return MonitoringModel(params, standardizer, K, phi, xi, thresholds, alpha)
