"""Model bundles as versioned JSON and sample matrices as CSV.

Floats are written by :mod:`json`, which emits the shortest decimal that
round-trips to the same IEEE-754 double, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ewc import ImportanceState
from .model import ModelParameters, ModeStandardizer
from .monitoring import MonitoringModel

BUNDLE_FORMAT = "psfa-ewc-bundle/1"


class BundleError(ValueError):
    """Unreadable, inconsistent or wrong-version model file."""


class DataFileError(ValueError):
    """Malformed CSV data file."""


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to monitor with, or keep updating, a trained model.

    ``standardizers`` maps each absorbed mode id to its z-scoring; the one of
    the most recent mode is also the monitor's default.
    """

    params: ModelParameters
    importance: ImportanceState
    monitor: MonitoringModel
    mode_ids: tuple[str, ...]
    standardizers: dict[str, ModeStandardizer]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mode_ids:
            raise BundleError("a bundle must record at least one mode")
        if len(set(self.mode_ids)) != len(self.mode_ids):
            raise BundleError(f"duplicate mode ids {list(self.mode_ids)}")
        missing = set(self.mode_ids) - set(self.standardizers)
        if missing:
            raise BundleError(f"no standardizer for modes {sorted(missing)}")

    @property
    def current_mode(self) -> str:
        return self.mode_ids[-1]

    def monitor_for(self, mode_id: str | None = None) -> MonitoringModel:
        """The monitor with the standardizer of ``mode_id`` (default: latest)."""
        if mode_id is None:
            return self.monitor
        if mode_id not in self.standardizers:
            raise BundleError(f"unknown mode {mode_id!r}; bundle has {list(self.mode_ids)}")
        return self.monitor.with_standardizer(self.standardizers[mode_id])


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _std_doc(s: ModeStandardizer) -> dict:
    return {"mean": _arr(s.mean), "stddev": _arr(s.stddev)}


def bundle_to_dict(b: ModelBundle) -> dict:
    p, imp, mon = b.params, b.importance, b.monitor
    return {
        "format": BUNDLE_FORMAT,
        "provenance": {"mode_ids": list(b.mode_ids), "config": b.config},
        "params": {
            "emission": _arr(p.emission),
            "transition_diag": _arr(p.transition_diag),
            "obs_noise_diag": _arr(p.obs_noise_diag),
            "initial_cov": _arr(p.initial_cov),
        },
        "importance": {
            "omega_v": _arr(imp.omega_v),
            "omega_lambda": _arr(imp.omega_lambda),
            "anchor_v": _arr(imp.anchor_v),
            "anchor_lambda": _arr(imp.anchor_lambda),
            "mode_count": imp.mode_count,
        },
        "monitor": {
            "standardizer": _std_doc(mon.standardizer),
            "steady_gain": _arr(mon.steady_gain),
            "pred_err_cov": _arr(mon.pred_err_cov),
            "dyn_cov": _arr(mon.dyn_cov),
            "thresholds": list(map(float, mon.thresholds)),
            "alpha": float(mon.alpha),
        },
        "standardizers": {k: _std_doc(v) for k, v in b.standardizers.items()},
    }


def _std_from(d) -> ModeStandardizer:
    return ModeStandardizer(np.array(d["mean"], dtype=float), np.array(d["stddev"], dtype=float))


def bundle_from_dict(doc: dict) -> ModelBundle:
    if not isinstance(doc, dict):
        raise BundleError("model file must hold a JSON object")
    fmt = doc.get("format")
    if fmt != BUNDLE_FORMAT:
        raise BundleError(f"unsupported model format {fmt!r} (expected {BUNDLE_FORMAT!r})")
    try:
        pd, imp, mon = doc["params"], doc["importance"], doc["monitor"]
        params = ModelParameters(
            emission=np.array(pd["emission"], dtype=float),
            transition_diag=np.array(pd["transition_diag"], dtype=float),
            obs_noise_diag=np.array(pd["obs_noise_diag"], dtype=float),
            initial_cov=np.array(pd["initial_cov"], dtype=float),
        )
        importance = ImportanceState(
            omega_v=np.array(imp["omega_v"], dtype=float),
            omega_lambda=np.array(imp["omega_lambda"], dtype=float),
            anchor_v=np.array(imp["anchor_v"], dtype=float),
            anchor_lambda=np.array(imp["anchor_lambda"], dtype=float),
            mode_count=int(imp["mode_count"]),
        )
        thresholds = tuple(float(v) for v in mon["thresholds"])
        if len(thresholds) != 3:
            raise BundleError("monitor needs exactly three thresholds")
        monitor = MonitoringModel(
            params=params,
            standardizer=_std_from(mon["standardizer"]),
            steady_gain=np.array(mon["steady_gain"], dtype=float),
            pred_err_cov=np.array(mon["pred_err_cov"], dtype=float),
            dyn_cov=np.array(mon["dyn_cov"], dtype=float),
            thresholds=thresholds,
            alpha=float(mon["alpha"]),
        )
        prov = doc["provenance"]
        standardizers = {str(k): _std_from(v) for k, v in doc["standardizers"].items()}
        bundle = ModelBundle(
            params=params,
            importance=importance,
            monitor=monitor,
            mode_ids=tuple(str(k) for k in prov["mode_ids"]),
            standardizers=standardizers,
            config=dict(prov.get("config") or {}),
        )
    except BundleError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"malformed model file: {exc}") from exc
    m, p = params.m, params.p
    if importance.anchor_v.shape != (m, p):
        raise BundleError("importance state does not match the model dimensions")
    if monitor.steady_gain.shape != (p, m) or monitor.pred_err_cov.shape != (m, m) or monitor.dyn_cov.shape != (p, p):
        raise BundleError("monitor matrices do not match the model dimensions")
    if any(s.mean.shape != (m,) for s in [monitor.standardizer, *standardizers.values()]):
        raise BundleError(f"standardizers must have {m} entries")
    return bundle


def save_bundle(bundle: ModelBundle, path) -> None:
    text = json.dumps(bundle_to_dict(bundle), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON: {exc}") from exc
    return bundle_from_dict(doc)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_data_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a header + one-sample-per-row CSV into ``(names, (m, N) matrix)``."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFileError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or any(not h for h in header):
        raise DataFileError(f"{path}: header row must name every column")
    if all(_is_number(h) for h in header):
        raise DataFileError(f"{path}: missing header row (first row is numeric)")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataFileError(f"{path}: no data rows")
    m = len(header)
    out = np.empty((len(body), m))
    for i, row in enumerate(body, start=2):
        if len(row) != m:
            raise DataFileError(f"{path}:{i}: expected {m} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise DataFileError(f"{path}:{i}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise DataFileError(f"{path}:{i}: NaN or infinite value")
        out[i - 2] = vals
    return header, out.T


def write_data_csv(path, names, data) -> None:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] != len(names):
        raise DataFileError(f"data must be a ({len(names)}, N) matrix")
    if not np.all(np.isfinite(data)):
        raise DataFileError("refusing to write NaN or infinite values")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for col in data.T:
            w.writerow([repr(float(v)) for v in col])
