"""Experiment spec files (YAML, ``schema_version: 1``).

A file holds one experiment at top level or several under ``experiments:``::

    schema_version: 1
    experiments:
      - name: MMNN-4
        cores: 4
        policy: CADS
        seeds: [1, 2, 3]
        geometry:   {channels: 1, ranks_per_channel: 2, banks_per_rank: 8, ...}
        timing:     {t_rcd: 8, t_cas: 8, t_rp: 8, t_burst: 4, cpu_per_dram_cycle: 4}
        controller: {buffer_capacity: 64, history_window: 100,
                     max_outstanding_per_core: 4, retry_delay: 4,
                     drain_cap: 10000000, blocking: full, address_mapping: xor-v1}
        learner:    {alpha: 0.15, gamma: 0.9, epsilon: 0.1,
                     starvation_denominator: pending}
        reward:     {mode: percentile, thresholds: [..4 values..]}   # or {table: rules.yaml}
        workload:
          synthetic:
            length: 200000
            profiles:
              intensive: {intensity: 0.05, locality: 0.9, ...}
            cores: [intensive, intensive, {intensity: 0.01, ...}, ...]
          # or
          trace: path/to/trace.txt          # relative to the spec file
          instructions: [..per core..]      # optional

Every section except ``name``, ``cores`` and ``workload`` is optional.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Optional

import yaml

from .dram import DramGeometry, TimingParams
from .engine import SimConfig, Simulation
from .errors import ConfigError
from .rl import LearnerConfig, RewardRuleTable
from .workload import CoreProfile, SyntheticParams, gen_synthetic, read_trace

SCHEMA_VERSION = 1

_CONTROLLER_KEYS = {"buffer_capacity", "history_window", "max_outstanding_per_core",
                    "retry_delay", "drain_cap", "blocking", "address_mapping"}
_EXPERIMENT_KEYS = {"name", "cores", "policy", "seeds", "geometry", "timing", "controller",
                    "learner", "reward", "workload"}


@dataclass(frozen=True)
class SyntheticWorkload:
    params: SyntheticParams
    length: int


@dataclass(frozen=True)
class TraceWorkload:
    path: str
    instructions: Optional[tuple] = None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    config: SimConfig
    workload: object
    repetitions: tuple

    def __post_init__(self):
        if not self.repetitions:
            raise ConfigError(f"{self.name}.seeds", "at least one seed is required")

    def workload_for(self, seed):
        """``(trace, instructions)`` for one repetition."""
        if isinstance(self.workload, SyntheticWorkload):
            trace = gen_synthetic(self.workload.params, seed, self.workload.length,
                                  self.config.geometry)
            return trace, trace.instructions
        if not os.path.exists(self.workload.path):
            raise ConfigError(f"{self.name}.workload.trace",
                              f"trace file not found: {self.workload.path}")
        return read_trace(self.workload.path), self.workload.instructions

    def simulation(self, policy=None, seed=None, sample=False) -> Simulation:
        seed = self.repetitions[0] if seed is None else seed
        config = replace(self.config, seed=seed, policy=policy or self.config.policy)
        trace, instructions = self.workload_for(seed)
        return Simulation(config, trace, instructions, sample=sample)


def _join(where, field):
    return f"{where}.{field}" if field else where


def _section(d, key, allowed, where):
    sec = d.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{where}.{key}", "must be a mapping")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}.{key}", f"unknown keys {sorted(unknown)}")
    return sec


def _build(cls, kwargs, where):
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(_join(where, e.field), e.message) from None
    except TypeError as e:
        raise ConfigError(where, str(e)) from None


def _names(cls):
    return {f.name for f in fields(cls)}


def load_rule_table(path) -> RewardRuleTable:
    with open(path, encoding="utf-8") as fh:
        d = yaml.safe_load(fh) or {}
    try:
        return RewardRuleTable.from_dict(d)
    except ConfigError as e:
        raise ConfigError(f"{path}", str(e)) from None


def _parse_experiment(d, base_dir, where):
    if not isinstance(d, dict):
        raise ConfigError(where, "experiment must be a mapping")
    unknown = set(d) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(where, f"unknown keys {sorted(unknown)}")
    for key in ("name", "cores", "workload"):
        if key not in d:
            raise ConfigError(f"{where}.{key}", "is required")
    name = str(d["name"])
    where = f"{name}"
    geometry = _build(DramGeometry, _section(d, "geometry", _names(DramGeometry), where), where)
    timing = _build(TimingParams, _section(d, "timing", _names(TimingParams), where), where)
    learner_sec = dict(_section(d, "learner", _names(LearnerConfig) | {"starvation_denominator"}, where))
    denominator = learner_sec.pop("starvation_denominator", "pending")
    learner = _build(LearnerConfig, learner_sec, where)
    reward_sec = _section(d, "reward", {"mode", "thresholds", "rewards", "degenerate", "table"}, where)
    if "table" in reward_sec:
        rule_table = load_rule_table(os.path.join(base_dir, reward_sec["table"]))
    else:
        try:
            rule_table = RewardRuleTable.from_dict(reward_sec)
        except ConfigError as e:
            raise ConfigError(_join(where, e.field), e.message) from None
    controller = _section(d, "controller", _CONTROLLER_KEYS, where)
    config = _build(SimConfig, dict(core_count=d["cores"], geometry=geometry, timing=timing,
                                    policy=d.get("policy", "CADS"), learner=learner,
                                    rule_table=rule_table,
                                    starvation_denominator=denominator, **controller), where)
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError(f"{where}.seeds", "must be a list of non-negative integers")

    wl = _section(d, "workload", {"synthetic", "trace", "instructions"}, where)
    if ("synthetic" in wl) == ("trace" in wl):
        raise ConfigError(f"{where}.workload", "give exactly one of 'synthetic' or 'trace'")
    if "synthetic" in wl:
        workload = _parse_synthetic(wl["synthetic"], f"{where}.workload.synthetic")
        if workload.params.core_count != config.core_count:
            raise ConfigError(f"{where}.workload.synthetic.cores",
                              f"lists {workload.params.core_count} cores, experiment has {config.core_count}")
    else:
        instr = wl.get("instructions")
        workload = TraceWorkload(os.path.join(base_dir, wl["trace"]),
                                 tuple(instr) if instr is not None else None)
    return ExperimentSpec(name, config, workload, tuple(seeds))


def _parse_synthetic(d, where):
    if not isinstance(d, dict):
        raise ConfigError(where, "must be a mapping")
    unknown = set(d) - {"length", "profiles", "cores"}
    if unknown:
        raise ConfigError(where, f"unknown keys {sorted(unknown)}")
    length = d.get("length", 100_000)
    if not isinstance(length, int) or length < 0:
        raise ConfigError(f"{where}.length", f"must be a non-negative integer, got {length!r}")
    profiles = d.get("profiles") or {}
    allowed = _names(CoreProfile)
    cores = []
    for i, entry in enumerate(d.get("cores") or []):
        if isinstance(entry, str):
            if entry not in profiles:
                raise ConfigError(f"{where}.cores[{i}]", f"unknown profile {entry!r}")
            entry = profiles[entry]
        if not isinstance(entry, dict) or set(entry) - allowed:
            raise ConfigError(f"{where}.cores[{i}]", f"profile keys must be among {sorted(allowed)}")
        cores.append(CoreProfile(**entry))
    try:
        params = SyntheticParams(tuple(cores))
    except ConfigError as e:
        raise ConfigError(_join(where, e.field), e.message) from None
    return SyntheticWorkload(params, length)


def load_specs(path) -> list:
    """Parse a spec file into a list of :class:`ExperimentSpec`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("spec", f"spec file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError("spec", f"cannot parse {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("spec", "top level must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    base_dir = os.path.dirname(os.path.abspath(path))
    if "experiments" in doc:
        raw = doc["experiments"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("experiments", "must be a non-empty list")
    else:
        raw = [{k: v for k, v in doc.items() if k != "schema_version"}]
    specs = [_parse_experiment(d, base_dir, f"experiments[{i}]") for i, d in enumerate(raw)]
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError("experiments", f"duplicate experiment names {dupes}")
    return specs


def shipped_spec(name) -> str:
    """Path of a spec file bundled with the package (e.g. ``"mmnn_4core.yaml"``)."""
    return os.path.join(os.path.dirname(__file__), "specs", name)
