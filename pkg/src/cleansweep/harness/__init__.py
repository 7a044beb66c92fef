from .experiment import (
    ConfigError,
    CsvSource,
    ExperimentConfig,
    ExperimentReport,
    ReportError,
    SeedResult,
    ZeekSource,
    asr_counts,
    average_metrics,
    compute_asr,
    load_config,
    read_report,
    run_experiment,
    run_seed,
)

__all__ = [
    "ConfigError", "CsvSource", "ExperimentConfig", "ExperimentReport", "ReportError",
    "SeedResult", "ZeekSource", "asr_counts", "average_metrics", "compute_asr",
    "load_config", "read_report", "run_experiment", "run_seed",
]
