from .numeric import CsvFormatError, load_numeric_csv
from .synthetic import SyntheticConfig, SyntheticConfigError, generate_synthetic, informative_indices
from .zeek import (
    AggregationResult,
    ConnRecord,
    LineError,
    ZeekFormatError,
    aggregate_windows,
    aggregate_with_keys,
    feature_names,
    key_string,
    parse_zeek_conn,
    read_label_map,
    read_zeek_conn,
)

__all__ = [
    "AggregationResult", "ConnRecord", "CsvFormatError", "LineError", "SyntheticConfig",
    "SyntheticConfigError", "ZeekFormatError", "aggregate_windows", "aggregate_with_keys",
    "feature_names", "generate_synthetic", "informative_indices", "key_string",
    "load_numeric_csv", "parse_zeek_conn", "read_label_map", "read_zeek_conn",
]
