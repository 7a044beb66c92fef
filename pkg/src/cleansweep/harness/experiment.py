"""Clean baseline, attack, defense and evaluation over a grid of seeds."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..attack import AttackConfig, design_trigger, inject_poison, make_backdoored_test
from ..core import Dataset, ensure_dir, split_dataset
from ..defense import DefenseConfig, run_defense
from ..ingest import (
    SyntheticConfig,
    aggregate_windows,
    generate_synthetic,
    load_numeric_csv,
    read_label_map,
    read_zeek_conn,
)
from ..models import TrainedClassifier, compute_metrics, predict_proba, train_surrogate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class ReportError(ValueError):
    pass


# --- attack success rate ------------------------------------------------------


def asr_counts(
    clean_model: TrainedClassifier, candidate: TrainedClassifier, backdoored: Dataset
) -> tuple[int, int]:
    """(rows flipped to benign by ``candidate``, rows the clean model calls malicious)."""
    if len(backdoored) == 0:
        raise ValueError("backdoored test set is empty")
    if (backdoored.labels != 1).any():
        raise ValueError("backdoored test rows must all be malicious")
    caught = predict_proba(clean_model, backdoored) >= 0.5
    evaded = predict_proba(candidate, backdoored) < 0.5
    return int((caught & evaded).sum()), int(caught.sum())


def compute_asr(
    clean_model: TrainedClassifier, candidate: TrainedClassifier, backdoored: Dataset
) -> float:
    """Share of triggered malicious rows, detected by the clean model, that the
    candidate labels benign. 0 with a warning when the clean model detects none."""
    flipped, caught = asr_counts(clean_model, candidate, backdoored)
    if caught == 0:
        warnings.warn("clean model detects no backdoored rows; ASR reported as 0", stacklevel=2)
        return 0.0
    return flipped / caught


# --- configuration --------------------------------------------------------------


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ZeekSource:
    conn: str
    window_seconds: float = 30.0
    internal_prefixes: tuple[str, ...] = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")
    labels: Optional[str] = None


@dataclass(frozen=True)
class CsvSource:
    path: str


@dataclass(frozen=True)
class ExperimentConfig:
    """One data source, the attack and defense settings, and the seeds.

    Each seed drives the train/test split, poison row choice and patch donors;
    synthetic data is regenerated per seed with that seed.
    """

    synthetic: Optional[SyntheticConfig] = None
    zeek: Optional[ZeekSource] = None
    csv: Optional[CsvSource] = None
    test_fraction: float = 0.2
    attack: AttackConfig = AttackConfig()
    defense: DefenseConfig = DefenseConfig()
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    record_runtime: bool = False

    def __post_init__(self):
        sources = [s for s in (self.synthetic, self.zeek, self.csv) if s is not None]
        if len(sources) != 1:
            raise ConfigError("exactly one data source (synthetic, zeek or csv) is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "test_fraction": self.test_fraction,
            "attack": asdict(self.attack),
            "defense": self.defense.to_dict(),
            "seeds": list(self.seeds),
            "record_runtime": self.record_runtime,
        }
        if self.synthetic:
            out["synthetic"] = asdict(self.synthetic)
        if self.zeek:
            z = asdict(self.zeek)
            z["internal_prefixes"] = list(z["internal_prefixes"])
            out["zeek"] = z
        if self.csv:
            out["csv"] = asdict(self.csv)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw: dict = {}
        if d.get("synthetic") is not None:
            kw["synthetic"] = _strict(SyntheticConfig, d["synthetic"], "synthetic")
        if d.get("zeek") is not None:
            z = dict(d["zeek"])
            if "internal_prefixes" in z:
                z["internal_prefixes"] = tuple(z["internal_prefixes"])
            kw["zeek"] = _strict(ZeekSource, z, "zeek")
        if d.get("csv") is not None:
            kw["csv"] = _strict(CsvSource, d["csv"], "csv")
        if "attack" in d:
            kw["attack"] = _strict(AttackConfig, d["attack"], "attack")
        if "defense" in d:
            kw["defense"] = parse_defense_config(d["defense"])
        for key in ("test_fraction", "record_runtime"):
            if key in d:
                kw[key] = d[key]
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def parse_defense_config(d: dict) -> DefenseConfig:
    if not isinstance(d, dict):
        raise ConfigError("defense: expected an object")
    unknown = set(d) - {f.name for f in fields(DefenseConfig)}
    if unknown:
        raise ConfigError(f"defense: unknown keys {sorted(unknown)}")
    try:
        return DefenseConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"defense: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


# --- data -----------------------------------------------------------------------


def load_data(config: ExperimentConfig, seed: int) -> Dataset:
    if config.synthetic is not None:
        return generate_synthetic(replace(config.synthetic, seed=seed))
    if config.zeek is not None:
        z = config.zeek
        labels = read_label_map(z.labels) if z.labels else None
        return aggregate_windows(read_zeek_conn(z.conn), z.window_seconds,
                                 z.internal_prefixes, labels=labels)
    return load_numeric_csv(config.csv.path).blind()


# --- per-seed run ---------------------------------------------------------------


METRIC_KEYS = (
    "base_asr", "defended_asr", "asr_denominator",
    "clean_f1", "clean_fpr", "poisoned_f1", "poisoned_fpr", "defended_f1", "defended_fpr",
    "poisons_in_dclean", "poison_share_of_dclean", "n_poison",
    "n_clusters", "c0_fraction", "n_suspicious", "n_features", "runtime_seconds",
)


@dataclass
class SeedResult:
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    metrics: dict = field(default_factory=dict)
    trigger: Optional[dict] = None
    sanitization: Optional[dict] = None
    trace: list = field(default_factory=list)  # per-iteration enrichment rows


def _poison_stats(row_ids: np.ndarray, poison_ids: np.ndarray, n_rows: int) -> tuple[float, float]:
    inside = int(np.isin(poison_ids, row_ids).sum())
    return inside / max(len(poison_ids), 1), inside / max(n_rows, 1)


def run_seed(config: ExperimentConfig, seed: int, trace_path: Optional[Path] = None) -> SeedResult:
    start = time.perf_counter()
    result = SeedResult(seed)
    data = load_data(config, seed)
    train, test = split_dataset(data, config.test_fraction, seed)
    kind, model_cfg = config.defense.surrogate_kind, config.defense.surrogate_config
    clean_model = train_surrogate(train, kind, model_cfg)
    clean = compute_metrics(predict_proba(clean_model, test), test.labels)

    attack = replace(config.attack, seed=seed)
    trigger = design_trigger(train, attack, config.defense.importance_depth)
    poisoned, poison_ids = inject_poison(train, trigger, attack.poison_rate, seed)
    backdoored = make_backdoored_test(test, trigger)
    poisoned_model = train_surrogate(poisoned, kind, model_cfg)
    poisoned_metrics = compute_metrics(predict_proba(poisoned_model, test), test.labels)
    flipped, caught = asr_counts(clean_model, poisoned_model, backdoored)
    if caught == 0:
        warnings.warn(f"seed {seed}: clean model detects no backdoored rows", stacklevel=2)

    def enrich(iteration, model, row_ids):
        m = compute_metrics(predict_proba(model, test), test.labels)
        f, c = asr_counts(clean_model, model, backdoored)
        retained, share = _poison_stats(row_ids, poison_ids, len(row_ids))
        result.trace.append({
            "iteration": iteration,
            "asr": f / c if c else 0.0,
            "f1": m.f1,
            "fpr": m.fpr,
            "poisons_in_dclean": retained,
            "poison_share_of_dclean": share,
        })

    defense_cfg = replace(config.defense, seed=seed)
    defended = run_defense(poisoned.blind(), defense_cfg, on_iteration=enrich)
    defended_metrics = compute_metrics(predict_proba(defended.model, test), test.labels)
    d_flipped, _ = asr_counts(clean_model, defended.model, backdoored)
    retained, share = _poison_stats(defended.clean_data.row_ids, poison_ids,
                                    len(defended.clean_data))
    report = defended.report
    result.metrics = {
        "base_asr": flipped / caught if caught else 0.0,
        "defended_asr": d_flipped / caught if caught else 0.0,
        "asr_denominator": caught,
        "clean_f1": clean.f1,
        "clean_fpr": clean.fpr,
        "poisoned_f1": poisoned_metrics.f1,
        "poisoned_fpr": poisoned_metrics.fpr,
        "defended_f1": defended_metrics.f1,
        "defended_fpr": defended_metrics.fpr,
        "poisons_in_dclean": retained,
        "poison_share_of_dclean": share,
        "n_poison": len(poison_ids),
        "n_clusters": report.n_clusters,
        "c0_fraction": report.seed_cluster_size / report.n_benign,
        "n_suspicious": len(report.suspicious_cluster_ids),
        "n_features": data.n_features,
        "runtime_seconds": time.perf_counter() - start if config.record_runtime else None,
    }
    result.trigger = trigger.to_dict()
    result.sanitization = report.to_dict()
    if trace_path is not None:
        extra = {row["iteration"]: {k: v for k, v in row.items() if k != "iteration"}
                 for row in result.trace}
        defended.trace.to_csv(trace_path, extra)
    return result


# --- report ---------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: dict
    seeds: list[SeedResult]
    averages: dict
    tool_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "config": self.config,
            "averages": self.averages,
            "seeds": [
                {
                    "seed": s.seed,
                    "status": s.status,
                    "error": s.error,
                    "metrics": s.metrics,
                    "trigger": s.trigger,
                    "sanitization": s.sanitization,
                }
                for s in self.seeds
            ],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())


def _clean_json(value):
    if isinstance(value, float):
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(value, dict):
        return {str(k): _clean_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean_json(v) for v in value]
    if isinstance(value, np.generic):
        return _clean_json(value.item())
    return value


def dumps(obj) -> str:
    return json.dumps(_clean_json(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def average_metrics(results: list[SeedResult]) -> dict:
    """Arithmetic means over successful seeds of every numeric metric."""
    ok = [r for r in results if r.status == "ok"]
    out: dict = {"n_ok": len(ok), "n_failed": len(results) - len(ok)}
    for key in METRIC_KEYS:
        vals = [r.metrics[key] for r in ok if r.metrics.get(key) is not None]
        out[key] = math.fsum(vals) / len(vals) if vals else None
    return out


_REPORT_KEYS = {"schema_version", "tool_version", "config", "averages", "seeds"}
_SEED_KEYS = {"seed", "status", "error", "metrics", "trigger", "sanitization"}


def read_report(path) -> dict:
    """Load a report JSON, rejecting other schema versions and unknown keys."""
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ReportError(f"unsupported report schema_version {raw.get('schema_version')}")
    unknown = set(raw) - _REPORT_KEYS
    if unknown:
        raise ReportError(f"unknown report keys {sorted(unknown)}")
    for entry in raw["seeds"]:
        extra = set(entry) - _SEED_KEYS
        if extra:
            raise ReportError(f"unknown per-seed keys {sorted(extra)}")
        extra = set(entry["metrics"]) - set(METRIC_KEYS)
        if extra:
            raise ReportError(f"unknown metric keys {sorted(extra)}")
    extra = set(raw["averages"]) - set(METRIC_KEYS) - {"n_ok", "n_failed"}
    if extra:
        raise ReportError(f"unknown average keys {sorted(extra)}")
    return raw


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Run every seed in order, isolating failures, and write the report and traces."""
    out = ensure_dir(out_dir) if out_dir is not None else None
    results = []
    for seed in sorted(config.seeds):
        trace_path = out / f"trace_seed{seed}.csv" if out else None
        try:
            results.append(run_seed(config, seed, trace_path))
        except Exception as exc:  # noqa: BLE001 - one bad seed must not sink the grid
            log.error("seed %d failed: %s", seed, exc)
            results.append(SeedResult(seed, status="failed",
                                      error=f"{type(exc).__name__}: {exc}"))
    report = ExperimentReport(config.to_dict(), results, average_metrics(results))
    if out:
        report.write(out / "report.json")
    return report
