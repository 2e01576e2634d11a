"""End-to-end training of one mode: fit, Fisher information, absorption, monitor."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .ewc import EwcConfig, ImportanceState, absorb_mode, fim_emission, fim_lambda
from .inference import smooth
from .learning import EmConfig, FitReport, fit_mode
from .model import ModelParameters, ModeStandardizer
from .monitoring import MonitoringModel, build_monitor


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the method in one place (the JSON config file)."""

    p: int = 2
    alpha: float = 0.01
    gamma1: float = 1.0
    gamma2: float = 1.0
    eta_v: float = 1.0
    eta_lambda: float = 1.0
    lambda_prior: float = 1e-3
    max_iters: int = 200
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be a positive integer")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        # delegate the remaining range checks
        self.em()
        self.ewc()

    def em(self) -> EmConfig:
        return EmConfig(self.max_iters, self.rel_tol, self.gamma1, self.gamma2)

    def ewc(self) -> EwcConfig:
        return EwcConfig(self.eta_v, self.eta_lambda, self.lambda_prior)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in doc.items():
            kwargs[k] = int(v) if k in ("p", "max_iters", "seed") else float(v)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class TrainedMode:
    params: ModelParameters
    standardizer: ModeStandardizer
    importance: ImportanceState  # after absorbing this mode
    monitor: MonitoringModel
    report: FitReport
    fim_v: np.ndarray
    fim_lambda: np.ndarray


def train_mode(
    data_raw: np.ndarray,
    cfg: PipelineConfig,
    importance: ImportanceState | None = None,
    calibration_raw: np.ndarray | None = None,
) -> TrainedMode:
    """Fit one mode under the current importance state and rebuild the monitor.

    With ``importance=None`` this is a plain single-mode fit. Control limits
    are calibrated on ``calibration_raw`` (the training data by default).
    """
    data_raw = np.asarray(data_raw, dtype=float)
    m = data_raw.shape[0]
    state = ImportanceState.fresh(m, cfg.p) if importance is None else importance
    params, std, report = fit_mode(data_raw, state, cfg.em(), cfg.p)
    X = std.standardize(data_raw)
    moments, _ = smooth(params, X)
    fv = fim_emission(params, X, moments)
    fl = fim_lambda(params, moments)
    new_state = absorb_mode(state, params, fv, fl, cfg.ewc())
    calib = data_raw if calibration_raw is None else calibration_raw
    monitor = build_monitor(params, std, calib, cfg.alpha)
    return TrainedMode(params, std, new_state, monitor, report, fv, fl)
