"""Synthetic multimode linear-Gaussian process generator with fault injection.

Scenario files are JSON documents (``"version": 1``)::

    {
      "version": 1,
      "name": "case1",
      "variables": ["level", "temperature", ...],     # m names
      "seed": 0,
      "fault": {"variable_index": 0, "onset": 501,     # default fault for
                "amplitude": 0.15, "kind": "additive-random"},  # every mode
      "modes": [
        {"id": "M1", "setpoints": [...], "emission": [[...], ...],
         "lambda": [...], "obs_noise": [...], "n_train": 1000, "n_test": 1000,
         "fault": {...}}                                # optional override
      ]
    }

``onset`` is the 1-based index of the first faulty test sample. Fault kinds:
``additive-random`` adds ``amplitude * |N(0, 1)|`` draws, ``step`` adds
``amplitude``, ``drift`` adds ``amplitude * (t - onset) / n_test``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SCENARIO_VERSION = 1
FAULT_KINDS = ("additive-random", "step", "drift")


class ScenarioError(ValueError):
    """Malformed scenario document."""


@dataclass(frozen=True)
class ModeSpec:
    setpoints: np.ndarray
    true_emission: np.ndarray
    true_lambda: np.ndarray
    true_obs_noise: np.ndarray
    n_train: int
    n_test: int
    mode_id: str = "M"

    def __post_init__(self):
        for name in ("setpoints", "true_emission", "true_lambda", "true_obs_noise"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        m = self.setpoints.shape[0]
        if self.true_emission.ndim != 2 or self.true_emission.shape[0] != m:
            raise ScenarioError(f"mode {self.mode_id}: emission must have {m} rows")
        p = self.true_emission.shape[1]
        if self.true_lambda.shape != (p,):
            raise ScenarioError(f"mode {self.mode_id}: lambda must have length {p}")
        if np.any(self.true_lambda < 0) or np.any(self.true_lambda >= 1):
            raise ScenarioError(f"mode {self.mode_id}: lambda entries must lie in [0, 1)")
        if self.true_obs_noise.shape != (m,) or np.any(self.true_obs_noise <= 0):
            raise ScenarioError(f"mode {self.mode_id}: obs_noise must be {m} positive variances")
        if self.n_train < 1 or self.n_test < 1:
            raise ScenarioError(f"mode {self.mode_id}: sample counts must be positive")

    @property
    def m(self) -> int:
        return self.setpoints.shape[0]

    @property
    def p(self) -> int:
        return self.true_emission.shape[1]


@dataclass(frozen=True)
class FaultSpec:
    variable_index: int
    onset: int
    amplitude: float
    kind: str = "additive-random"

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ScenarioError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        if self.onset < 1:
            raise ScenarioError("fault onset must be a positive sample index")
        if self.amplitude < 0:
            raise ScenarioError("fault amplitude must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    name: str
    variables: list[str]
    modes: list[ModeSpec]
    faults: list[FaultSpec | None]
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def mode_ids(self) -> list[str]:
        return [mode.mode_id for mode in self.modes]


def generate_mode(spec: ModeSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one mode; returns ``(train, test_normal)`` as ``(m, n)`` matrices.

    The latent chain starts from its stationary ``N(0, I)`` law and runs
    continuously through the training and test segments.
    """
    rng = np.random.default_rng(seed)
    m, p = spec.m, spec.p
    n = spec.n_train + spec.n_test
    lam = spec.true_lambda
    w_sd = np.sqrt(1.0 - lam**2)

    y = np.empty((p, n))
    y[:, 0] = rng.standard_normal(p)
    w = rng.standard_normal((p, n))
    for t in range(1, n):
        y[:, t] = lam * y[:, t - 1] + w_sd * w[:, t]
    e = rng.standard_normal((m, n)) * np.sqrt(spec.true_obs_noise)[:, None]
    x = spec.setpoints[:, None] + spec.true_emission @ y + e
    return x[:, : spec.n_train], x[:, spec.n_train :]


def inject_fault(test: np.ndarray, fault: FaultSpec, seed) -> np.ndarray:
    """Return a copy of ``test`` with ``fault`` applied from its onset onward."""
    test = np.asarray(test, dtype=float)
    m, n = test.shape
    if not 0 <= fault.variable_index < m:
        raise ScenarioError(f"fault variable {fault.variable_index} out of range for {m} variables")
    if fault.onset >= n:
        raise ScenarioError(f"fault onset {fault.onset} must precede the last of {n} test samples")
    out = test.copy()
    start = fault.onset - 1
    k = n - start
    if fault.kind == "additive-random":
        rng = np.random.default_rng(seed)
        delta = fault.amplitude * np.abs(rng.standard_normal(k))
    elif fault.kind == "step":
        delta = np.full(k, fault.amplitude)
    else:
        t = np.arange(fault.onset, n + 1)
        delta = fault.amplitude * (t - fault.onset) / n
    out[fault.variable_index, start:] += delta
    return out


def _fault_from_dict(d) -> FaultSpec:
    try:
        return FaultSpec(
            variable_index=int(d["variable_index"]),
            onset=int(d["onset"]),
            amplitude=float(d["amplitude"]),
            kind=str(d.get("kind", "additive-random")),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed fault entry: {exc}") from exc


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    version = doc.get("version")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {version!r} (expected {SCENARIO_VERSION})")
    try:
        default_fault = _fault_from_dict(doc["fault"]) if doc.get("fault") else None
        modes, faults = [], []
        for i, md in enumerate(doc["modes"]):
            modes.append(
                ModeSpec(
                    setpoints=md["setpoints"],
                    true_emission=md["emission"],
                    true_lambda=md["lambda"],
                    true_obs_noise=md["obs_noise"],
                    n_train=int(md["n_train"]),
                    n_test=int(md["n_test"]),
                    mode_id=str(md.get("id", f"M{i + 1}")),
                )
            )
            faults.append(_fault_from_dict(md["fault"]) if md.get("fault") else default_fault)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    if not modes:
        raise ScenarioError("scenario defines no modes")
    m, p = modes[0].m, modes[0].p
    if any(md.m != m or md.p != p for md in modes):
        raise ScenarioError("all modes must share the same numbers of variables and latents")
    variables = list(doc.get("variables") or [f"x{i + 1}" for i in range(m)])
    if len(variables) != m:
        raise ScenarioError(f"expected {m} variable names, got {len(variables)}")
    for md, f in zip(modes, faults):
        if f is not None and (f.onset >= md.n_test or f.variable_index >= m):
            raise ScenarioError(f"fault does not fit mode {md.mode_id}")
    return Scenario(
        name=str(doc.get("name", "scenario")),
        variables=variables,
        modes=modes,
        faults=faults,
        seed=int(doc.get("seed", 0)),
        raw=doc,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def builtin_scenario(name: str) -> Scenario:
    """Load one of the shipped scenarios: ``case1``, ``case2`` or ``two_mode``."""
    ref = resources.files("psfa_ewc") / "scenarios" / f"{name}.json"
    if not ref.is_file():
        raise ScenarioError(f"no built-in scenario named {name!r}")
    return scenario_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def mode_seeds(seed: int, n_modes: int) -> list[tuple[int, int]]:
    """Independent (data, fault) seeds per mode derived from one scenario seed."""
    children = np.random.SeedSequence(seed).spawn(2 * n_modes)
    return [
        (int(children[2 * i].generate_state(1)[0]), int(children[2 * i + 1].generate_state(1)[0]))
        for i in range(n_modes)
    ]


@dataclass(frozen=True)
class ModeData:
    mode_id: str
    train: np.ndarray
    test_normal: np.ndarray
    test: np.ndarray  # test_normal with the fault applied
    fault: FaultSpec | None


def simulate_scenario(scenario: Scenario, seed: int | None = None) -> list[ModeData]:
    seed = scenario.seed if seed is None else seed
    out = []
    for spec, fault, (s_data, s_fault) in zip(
        scenario.modes, scenario.faults, mode_seeds(seed, len(scenario.modes))
    ):
        train, test_normal = generate_mode(spec, s_data)
        test = inject_fault(test_normal, fault, s_fault) if fault is not None else test_normal
        out.append(ModeData(spec.mode_id, train, test_normal, test, fault))
    return out
