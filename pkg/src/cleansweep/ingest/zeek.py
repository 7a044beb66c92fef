"""Zeek ``conn.log`` parsing and windowed per-host/port aggregation."""

from __future__ import annotations

import csv
import ipaddress
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import Dataset

log = logging.getLogger(__name__)

UNSET = "-"

DEFAULT_PROTOCOLS = ("tcp", "udp", "icmp")
DEFAULT_STATES = (
    "S0", "S1", "SF", "REJ", "S2", "S3", "RSTO", "RSTR",
    "RSTOS0", "RSTRH", "SH", "SHR", "OTH",
)
VOLUME_FIELDS = ("orig_pkts", "resp_pkts", "orig_bytes", "resp_bytes", "duration")
OTHER = "other"


class ZeekFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ConnRecord:
    ts: float
    orig_host: str
    orig_port: int
    resp_host: str
    resp_port: int
    proto: str
    service: Optional[str]
    duration: Optional[float]
    orig_bytes: Optional[int]
    resp_bytes: Optional[int]
    conn_state: str
    orig_pkts: Optional[int]
    resp_pkts: Optional[int]


@dataclass(frozen=True)
class LineError:
    line_no: int
    message: str


# record attribute -> (zeek column, converter, required)
_COLUMNS = {
    "ts": ("ts", float, True),
    "orig_host": ("id.orig_h", str, True),
    "orig_port": ("id.orig_p", int, True),
    "resp_host": ("id.resp_h", str, True),
    "resp_port": ("id.resp_p", int, True),
    "proto": ("proto", str, True),
    "service": ("service", str, False),
    "duration": ("duration", float, False),
    "orig_bytes": ("orig_bytes", int, False),
    "resp_bytes": ("resp_bytes", int, False),
    "conn_state": ("conn_state", str, False),
    "orig_pkts": ("orig_pkts", int, False),
    "resp_pkts": ("resp_pkts", int, False),
}


def _decode_separator(raw: str) -> str:
    return raw.encode().decode("unicode_escape") if raw.startswith("\\x") else raw


def _convert(value: str, conv, unset: str):
    if value == unset or value == "":
        return None
    return conv(value)


def _check(rec: dict) -> None:
    if rec["ts"] < 0:
        raise ValueError(f"negative timestamp {rec['ts']}")
    for port in ("orig_port", "resp_port"):
        if not 0 <= rec[port] <= 65535:
            raise ValueError(f"{port} {rec[port]} outside [0, 65535]")
    for name in ("orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts", "duration"):
        v = rec[name]
        if v is not None and (v < 0 or (isinstance(v, float) and not math.isfinite(v))):
            raise ValueError(f"{name} must be a non-negative number, got {v}")


def parse_zeek_conn(lines: Iterable[str], errors: Optional[list] = None) -> list[ConnRecord]:
    """Parse Zeek TSV conn.log text.

    Column positions come from the ``#fields`` header. Lines that fail to
    convert are skipped; each one is logged and appended to ``errors`` as a
    :class:`LineError` when a list is supplied.
    """
    sep = "\t"
    unset = UNSET
    fields: Optional[list[str]] = None
    index: dict[str, int] = {}
    records = []
    skipped = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        if line.startswith("#"):
            key, _, rest = line.partition(" " if line.startswith("#separator") else sep)
            if key == "#separator":
                sep = _decode_separator(rest.strip())
            elif key == "#unset_field":
                unset = rest
            elif key == "#fields":
                fields = rest.split(sep)
                missing = [col for col, _, req in _COLUMNS.values() if req and col not in fields]
                if missing:
                    raise ZeekFormatError(f"#fields header lacks required columns {missing}")
                index = {attr: fields.index(col) for attr, (col, _, _) in _COLUMNS.items()
                         if col in fields}
            continue
        if fields is None:
            raise ZeekFormatError(f"line {line_no}: data before any #fields header")
        values = line.split(sep)
        try:
            if len(values) != len(fields):
                raise ValueError(f"expected {len(fields)} columns, found {len(values)}")
            rec = {}
            for attr, (col, conv, required) in _COLUMNS.items():
                v = _convert(values[index[attr]], conv, unset) if attr in index else None
                if required and v is None:
                    raise ValueError(f"required field {col} is unset")
                rec[attr] = v
            rec["conn_state"] = rec["conn_state"] or OTHER
            rec["proto"] = rec["proto"].lower()
            _check(rec)
        except ValueError as exc:
            skipped += 1
            log.warning("conn.log line %d skipped: %s", line_no, exc)
            if errors is not None:
                errors.append(LineError(line_no, str(exc)))
            continue
        records.append(ConnRecord(**rec))
    if fields is None:
        raise ZeekFormatError("missing #fields header")
    if skipped:
        log.warning("%d conn.log lines skipped", skipped)
    return records


def read_zeek_conn(path, errors: Optional[list] = None) -> list[ConnRecord]:
    with open(path) as fh:
        return parse_zeek_conn(fh, errors)


# --- aggregation -------------------------------------------------------------


def feature_names(protocols: Sequence[str] = DEFAULT_PROTOCOLS,
                  states: Sequence[str] = DEFAULT_STATES) -> list[str]:
    """Column layout of :func:`aggregate_windows`."""
    names = [f"proto_{p}" for p in protocols] + [f"proto_{OTHER}"]
    names += [f"state_{s}" for s in states] + [f"state_{OTHER}"]
    for f in VOLUME_FIELDS:
        names += [f"{f}_sum", f"{f}_min", f"{f}_max"]
    names += ["distinct_ext_orig", "distinct_ext_resp", "distinct_dest_ports"]
    return names


class InternalNetwork:
    """Membership test against a list of CIDR prefixes."""

    def __init__(self, prefixes: Sequence[str]):
        if not prefixes:
            raise ValueError("at least one internal prefix is required")
        self.networks = [ipaddress.ip_network(p, strict=False) for p in prefixes]

    def __contains__(self, host: str) -> bool:
        try:
            addr = ipaddress.ip_address(host)
        except ValueError:
            return False
        return any(addr.version == net.version and addr in net for net in self.networks)


def key_string(key: tuple[int, str, int]) -> str:
    return f"{key[0]}|{key[1]}|{key[2]}"


def read_label_map(path) -> dict[str, int]:
    """Two-column CSV ``key,label`` with keys ``window_index|internal_ip|dest_port``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "key":
                continue
            out[row[0].strip()] = int(row[1])
    return out


@dataclass
class AggregationResult:
    data: Dataset
    keys: list[tuple[int, str, int]]
    skipped_external: int


def aggregate_windows(records: Sequence[ConnRecord], window_seconds: float = 30.0,
                      internal_prefixes: Sequence[str] = ("10.0.0.0/8", "172.16.0.0/12",
                                                          "192.168.0.0/16"),
                      **kwargs) -> Dataset:
    """Dataset view of :func:`aggregate_with_keys`."""
    return aggregate_with_keys(records, window_seconds, internal_prefixes, **kwargs).data


def aggregate_with_keys(
    records: Sequence[ConnRecord],
    window_seconds: float = 30.0,
    internal_prefixes: Sequence[str] = ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16"),
    labels: Optional[dict[str, int]] = None,
    protocols: Sequence[str] = DEFAULT_PROTOCOLS,
    states: Sequence[str] = DEFAULT_STATES,
) -> AggregationResult:
    """One row per (tumbling window, internal IP, destination port).

    The internal endpoint is the originator when its address matches
    ``internal_prefixes``, otherwise the responder; records with no internal
    endpoint are skipped. Volume statistics ignore unset values and are 0
    when a group has none. The distinct external-IP and destination-port
    counts are taken over the whole (window, internal IP) group, external IPs
    split by whether they originated or answered. Rows are sorted by key and
    labeled through ``labels`` (``key_string`` -> label), default benign.
    """
    if not window_seconds > 0:
        raise ValueError("window_seconds must be positive")
    internal = InternalNetwork(internal_prefixes)
    proto_col = {p: i for i, p in enumerate(protocols)}
    n_proto = len(protocols) + 1
    state_col = {s: n_proto + i for i, s in enumerate(states)}
    n_state = len(states) + 1
    vol_base = n_proto + n_state
    names = feature_names(protocols, states)
    width = len(names)

    groups: dict[tuple[int, str, int], list[ConnRecord]] = {}
    hosts: dict[tuple[int, str], dict[str, set]] = {}
    skipped = 0
    for rec in records:
        if rec.orig_host in internal:
            host, ext, ext_role = rec.orig_host, rec.resp_host, "resp"
        elif rec.resp_host in internal:
            host, ext, ext_role = rec.resp_host, rec.orig_host, "orig"
        else:
            skipped += 1
            continue
        window = int(math.floor(rec.ts / window_seconds))
        groups.setdefault((window, host, rec.resp_port), []).append(rec)
        h = hosts.setdefault((window, host), {"orig": set(), "resp": set(), "ports": set()})
        if ext not in internal:
            h[ext_role].add(ext)
        h["ports"].add(rec.resp_port)
    if skipped:
        log.info("%d records with no internal endpoint skipped", skipped)

    keys = sorted(groups)
    X = np.zeros((len(keys), width))
    for r, key in enumerate(keys):
        row = X[r]
        recs = groups[key]
        for rec in recs:
            row[proto_col.get(rec.proto, n_proto - 1)] += 1
            row[state_col.get(rec.conn_state, vol_base - 1)] += 1
        for j, f in enumerate(VOLUME_FIELDS):
            vals = [getattr(rec, f) for rec in recs if getattr(rec, f) is not None]
            if vals:
                row[vol_base + 3 * j: vol_base + 3 * j + 3] = (
                    math.fsum(vals), min(vals), max(vals),
                )
        h = hosts[(key[0], key[1])]
        row[-3:] = (len(h["orig"]), len(h["resp"]), len(h["ports"]))

    labels = labels or {}
    y = np.array([labels.get(key_string(k), 0) for k in keys], dtype=np.int8)
    data = Dataset(X, y, names, np.arange(len(keys)))
    return AggregationResult(data, keys, skipped)
