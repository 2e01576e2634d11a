"""FDR/FAR scoring and the sequential train/update/test harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModeStandardizer
from .monitoring import STATISTICS, Decision, MonitoringModel, monitor_stream
from .pipeline import PipelineConfig, TrainedMode, train_mode
from .simulator import ModeData, Scenario, simulate_scenario


@dataclass(frozen=True)
class ScoreCard:
    """Per-statistic detection and false-alarm rates in percent.

    ``fdr`` is ``nan`` when the stream has no faulty segment.
    """

    fdr: dict[str, float]
    far: dict[str, float]

    def row(self) -> dict[str, float]:
        out = {}
        for s in STATISTICS:
            out[f"{s}_FDR"] = self.fdr[s]
            out[f"{s}_FAR"] = self.far[s]
        return out


def _flag_matrix(decisions: Sequence[Decision]) -> np.ndarray:
    return np.array([d.flags for d in decisions], dtype=bool).reshape(-1, 3)


def score(decisions: Sequence[Decision], onset: int) -> ScoreCard:
    """Rates over samples ``t < onset`` (FAR) and ``t >= onset`` (FDR), 1-based."""
    flags = _flag_matrix(decisions)
    n = flags.shape[0]
    if not 2 <= onset <= n:
        raise ValueError(f"onset {onset} leaves an empty segment in a stream of {n}")
    before, after = flags[: onset - 1], flags[onset - 1 :]
    far = 100.0 * before.mean(axis=0)
    fdr = 100.0 * after.mean(axis=0)
    return ScoreCard(
        fdr=dict(zip(STATISTICS, map(float, fdr))),
        far=dict(zip(STATISTICS, map(float, far))),
    )


def score_normal(decisions: Sequence[Decision]) -> ScoreCard:
    flags = _flag_matrix(decisions)
    if flags.shape[0] == 0:
        raise ValueError("empty decision sequence")
    far = 100.0 * flags.mean(axis=0)
    return ScoreCard(
        fdr={s: float("nan") for s in STATISTICS},
        far=dict(zip(STATISTICS, map(float, far))),
    )


@dataclass(frozen=True)
class Situation:
    """One row of the comparison plan: a model label evaluated on a test mode."""

    name: str
    method: str  # "PSFA" or "PSFA-EWC"
    model: str
    training: str  # e.g. "M1", "A + M2", "-" when reusing an earlier model
    test_mode: int  # index into the scenario's modes


def default_situations(mode_ids: Sequence[str]) -> list[Situation]:
    """The PSFA / PSFA-EWC plan: each new mode gets a sequentially updated
    model and a fresh single-mode model, each tested on the new mode and on
    every earlier mode."""
    labels = iter("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
    out: list[Situation] = []
    first = next(labels)
    out.append(Situation("Situation 1", "PSFA", first, mode_ids[0], 0))
    prev_ewc = first
    for j in range(1, len(mode_ids)):
        ewc, plain = next(labels), next(labels)
        plan = [
            ("PSFA-EWC", ewc, f"{prev_ewc} + {mode_ids[j]}"),
            ("PSFA", plain, mode_ids[j]),
        ]
        for method, label, training in plan:
            out.append(Situation("", method, label, training, j))
            for k in range(j):
                out.append(Situation("", method, label, "-", k))
        prev_ewc = ewc
    return [
        Situation(f"Situation {i + 1}", s.method, s.model, s.training, s.test_mode)
        for i, s in enumerate(out)
    ]


@dataclass(frozen=True)
class SituationResult:
    situation: Situation
    test_mode_id: str
    card: ScoreCard


def train_models(modes: Sequence[ModeData], cfg: PipelineConfig) -> dict[str, TrainedMode]:
    """Train the labelled models of :func:`default_situations` for the given modes."""
    labels = iter("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
    models: dict[str, TrainedMode] = {}
    first = train_mode(modes[0].train, cfg)
    prev = next(labels)
    models[prev] = first
    for j in range(1, len(modes)):
        ewc, plain = next(labels), next(labels)
        models[ewc] = train_mode(modes[j].train, cfg, importance=models[prev].importance)
        models[plain] = train_mode(modes[j].train, cfg)
        prev = ewc
    return models


def evaluate_stream(monitor: MonitoringModel, mode: ModeData, standardizer: ModeStandardizer) -> ScoreCard:
    decisions = monitor_stream(monitor.with_standardizer(standardizer), mode.test)
    if mode.fault is None:
        return score_normal(decisions)
    return score(decisions, mode.fault.onset)


def run_situation_matrix(
    scenario: Scenario | Sequence[ModeData],
    cfg: PipelineConfig,
    situations: Sequence[Situation] | None = None,
    seed: int | None = None,
) -> list[SituationResult]:
    """Train every model in the plan and score each situation.

    Test streams are z-scored with the statistics of their own mode's
    training data, whichever model monitors them.
    """
    modes = simulate_scenario(scenario, seed) if isinstance(scenario, Scenario) else list(scenario)
    if len(modes) < 2:
        raise ValueError("the situation matrix needs at least two modes")
    ids = [md.mode_id for md in modes]
    situations = default_situations(ids) if situations is None else list(situations)
    models = train_models(modes, cfg)
    standardizers = [ModeStandardizer.fit(md.train) for md in modes]
    results = []
    for s in situations:
        if s.model not in models:
            raise ValueError(f"situation {s.name} refers to unknown model {s.model!r}")
        card = evaluate_stream(models[s.model].monitor, modes[s.test_mode], standardizers[s.test_mode])
        results.append(SituationResult(s, ids[s.test_mode], card))
    return results


CSV_COLUMNS = ["situation", "method", "model", "training", "test_mode"] + [
    f"{s}_{k}" for s in STATISTICS for k in ("FDR", "FAR")
]


def write_results_csv(results: Sequence[SituationResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            row = r.card.row()
            w.writerow(
                [r.situation.name, r.situation.method, r.situation.model, r.situation.training, r.test_mode_id]
                + [f"{row[c]:.2f}" for c in CSV_COLUMNS[5:]]
            )


def summarize(results: Sequence[SituationResult]) -> str:
    head = f"{'Situation':<14}{'Method':<10}{'Model':<7}{'Train':<10}{'Test':<6}"
    head += "".join(f"{s + ' FDR':>9}{s + ' FAR':>9}" for s in STATISTICS)
    lines = [head, "-" * len(head)]
    for r in results:
        s = r.situation
        line = f"{s.name:<14}{s.method:<10}{s.model:<7}{s.training:<10}{r.test_mode_id:<6}"
        for stat in STATISTICS:
            line += f"{r.card.fdr[stat]:9.1f}{r.card.far[stat]:9.1f}"
        lines.append(line)
    return "\n".join(lines)


def write_report(results: Sequence[SituationResult], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(results, out_dir / "scorecards.csv")
    (out_dir / "summary.txt").write_text(summarize(results) + "\n", encoding="utf-8")
    return out_dir
