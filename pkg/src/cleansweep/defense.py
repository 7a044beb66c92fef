"""Poison mitigation by clustering the benign training rows and scoring clusters
with the loss of models trained on a growing trusted set.

Pipeline: rank features and project the benign rows onto the top few, cluster
them with OPTICS, start the trusted set from the largest cluster plus every
malicious row, then repeatedly retrain and admit the lowest-loss clusters.
Clusters that come in last, or whose loss collapses on admission, are treated
as suspicious and either dropped or patched before the final model is fit.

Nothing here reads ``Dataset.poison_mask``; inputs are blinded on entry.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .clustering import Clustering, OpticsParams, ReachabilityResult, cluster_points
from .core import Dataset, select_columns, standardize
from .models import (
    GbdtConfig,
    LinearConfig,
    ModelError,
    TrainedClassifier,
    config_from_dict,
    log_losses,
    predict_proba,
    rank_features,
    train_surrogate,
)

FLAG_MODES = ("fixed_threshold", "zscore")
SANITIZE_MODES = ("filter", "patch")
C0_MIN_SHARE = 0.5


class DefenseError(RuntimeError):
    pass


class DefenseWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DefenseConfig:
    n_cluster_features: int = 4
    n_patch_features: int = 8
    window_fraction: float = 0.05
    fixed_threshold: float = 0.8
    z_threshold: float = 2.0
    flag_mode: str = "fixed_threshold"
    sanitize_mode: str = "filter"
    surrogate_kind: str = "gbdt"
    surrogate_config: Optional[GbdtConfig | LinearConfig] = None
    optics: OpticsParams = OpticsParams()
    importance_depth: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_cluster_features < 1:
            raise ValueError("n_cluster_features must be >= 1")
        if self.n_patch_features < self.n_cluster_features:
            raise ValueError("n_patch_features must be >= n_cluster_features")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ValueError("window_fraction must lie in (0, 1]")
        if not 0.0 < self.fixed_threshold <= 1.0:
            raise ValueError("fixed_threshold must lie in (0, 1]")
        if not self.z_threshold > 0:
            raise ValueError("z_threshold must be positive")
        if self.flag_mode not in FLAG_MODES:
            raise ValueError(f"flag_mode must be one of {FLAG_MODES}")
        if self.sanitize_mode not in SANITIZE_MODES:
            raise ValueError(f"sanitize_mode must be one of {SANITIZE_MODES}")
        if self.surrogate_kind not in ("gbdt", "linear"):
            raise ValueError("surrogate_kind must be 'gbdt' or 'linear'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optics"] = asdict(self.optics)
        if isinstance(d["optics"]["max_eps"], float) and math.isinf(d["optics"]["max_eps"]):
            d["optics"]["max_eps"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseConfig":
        d = dict(d)
        optics = dict(d.pop("optics", None) or {})
        if optics.get("max_eps") is None:
            optics["max_eps"] = math.inf
        kind = d.get("surrogate_kind", "gbdt")
        surrogate = d.pop("surrogate_config", None)
        return cls(
            **d,
            optics=OpticsParams(**optics),
            surrogate_config=config_from_dict(kind, surrogate) if surrogate else None,
        )


# --- stage 1 and 2: feature subspace and clustering --------------------------


def reduce_dimensionality(
    train: Dataset, n: int, max_depth: int = 6
) -> tuple[Dataset, list[int]]:
    """Benign rows projected onto the ``n`` most important features.

    Importance comes from an entropy tree fit on all of ``train``.
    """
    if not 1 <= n <= train.n_features:
        raise DefenseError(f"cannot keep {n} of {train.n_features} features")
    order, importances = rank_features(train, max_depth=max_depth)
    if not importances.any():
        raise DefenseError(
            "feature importances are all zero; increase the importance tree depth"
        )
    indices = [int(i) for i in order[:n]]
    return select_columns(train.take(train.labels == 0), indices), indices


def cluster_benign(
    reduced: Dataset, params: OpticsParams = OpticsParams(), scale: bool = True
) -> tuple[Clustering, ReachabilityResult]:
    """OPTICS clustering with noise folded into one group.

    Warns when the largest cluster holds under half of the rows.
    """
    points = standardize(reduced)[0].features if scale else reduced.features
    clustering, reach = cluster_points(points, params)
    if clustering.largest_id < 0:
        raise DefenseError("clustering found no clusters in the benign rows")
    share = clustering.cluster_sizes[clustering.largest_id] / len(reduced)
    if share < C0_MIN_SHARE:
        warnings.warn(
            f"largest benign cluster holds only {share:.1%} of benign rows",
            DefenseWarning,
            stacklevel=2,
        )
    return clustering, reach


# --- stage 3: iterative scoring -----------------------------------------------


@dataclass
class ClusterRecord:
    cluster_id: int
    size: int
    admission_rank: int  # 1 for the seed cluster
    iteration: int  # 0 for the seed cluster
    loss_before: float = math.nan
    loss_after: float = math.nan

    @property
    def delta(self) -> float:
        return self.loss_after - self.loss_before


@dataclass
class IterationRecord:
    iteration: int
    admitted: list[int]
    fraction_included: float
    remaining_losses: dict[int, float]


@dataclass
class ScoringTrace:
    n_clusters: int
    seed_cluster: int
    iterations: list[IterationRecord] = field(default_factory=list)
    clusters: dict[int, ClusterRecord] = field(default_factory=dict)

    @property
    def admission_order(self) -> list[int]:
        return sorted(self.clusters, key=lambda c: self.clusters[c].admission_rank)

    def threshold_rank(self, fraction: float) -> int:
        return math.ceil(fraction * self.n_clusters - 1e-12)

    def admitted_within(self, fraction: float) -> list[int]:
        """Cluster ids among the first ``ceil(fraction * K)`` admissions."""
        return self.admission_order[: self.threshold_rank(fraction)]

    def deltas(self) -> dict[int, float]:
        return {c: r.delta for c, r in self.clusters.items() if c != self.seed_cluster}

    def to_csv(self, path, extra: Optional[dict[int, dict]] = None) -> None:
        """One ``iteration`` row per step and one ``cluster`` row per cluster.

        ``extra`` maps an iteration index to additional columns.
        """
        extra = extra or {}
        extra_cols = sorted({k for row in extra.values() for k in row})
        header = [
            "record", "iteration", "fraction_included", "admitted", "cluster_id",
            "size", "admission_rank", "loss_before", "loss_after", "delta", *extra_cols,
        ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for it in self.iterations:
                more = extra.get(it.iteration, {})
                w.writerow(
                    ["iteration", it.iteration, _fmt(it.fraction_included),
                     ";".join(map(str, it.admitted)), "", "", "", "", "", ""]
                    + [_fmt(more.get(c, "")) for c in extra_cols]
                )
            for cid in self.admission_order:
                r = self.clusters[cid]
                w.writerow(
                    ["cluster", r.iteration, "", "", cid, r.size, r.admission_rank,
                     _fmt(r.loss_before), _fmt(r.loss_after), _fmt(r.delta)]
                    + [""] * len(extra_cols)
                )


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class _BenignLayout:
    """Row bookkeeping shared by scoring, sanitization and diagnostics."""

    def __init__(self, train: Dataset, clustering: Clustering):
        self.train = train.blind()
        self.benign_rows = np.flatnonzero(train.labels == 0)
        self.malicious_rows = np.flatnonzero(train.labels == 1)
        if len(clustering.labels) != len(self.benign_rows):
            raise DefenseError(
                f"clustering covers {len(clustering.labels)} rows, train has "
                f"{len(self.benign_rows)} benign rows"
            )
        self.clustering = clustering
        self.ids = sorted(clustering.ids)
        self.dense = np.searchsorted(self.ids, clustering.labels)
        self.sizes = np.bincount(self.dense, minlength=len(self.ids))

    def rows_of(self, cluster_ids: Sequence[int]) -> np.ndarray:
        """Train row indices of the given clusters, in train order."""
        wanted = np.isin(self.clustering.labels, list(cluster_ids))
        return self.benign_rows[wanted]

    def training_set(self, cluster_ids: Sequence[int]) -> Dataset:
        rows = np.sort(np.concatenate([self.rows_of(cluster_ids), self.malicious_rows]))
        return self.train.take(rows)

    def cluster_losses(self, model: TrainedClassifier) -> dict[int, float]:
        benign = self.train.features[self.benign_rows]
        losses = log_losses(predict_proba(model, benign), np.zeros(len(benign)))
        sums = np.bincount(self.dense, weights=losses, minlength=len(self.ids))
        return {cid: float(sums[k] / self.sizes[k]) for k, cid in enumerate(self.ids)}


def _fit(data: Dataset, config: DefenseConfig, context: str) -> TrainedClassifier:
    try:
        return train_surrogate(data, config.surrogate_kind, config.surrogate_config)
    except (ModelError, ValueError) as exc:
        raise DefenseError(f"surrogate training failed at {context}: {exc}") from exc


def _train(layout: _BenignLayout, cluster_ids, config: DefenseConfig, context: str):
    return _fit(layout.training_set(cluster_ids), config, context)


# called as hook(iteration, model, row ids of the set the model was trained on)
IterationHook = Callable[[int, TrainedClassifier, np.ndarray], None]


def iterative_scoring(
    train: Dataset,
    clustering: Clustering,
    config: DefenseConfig = DefenseConfig(),
    on_iteration: Optional[IterationHook] = None,
) -> ScoringTrace:
    """Grow the trusted set from the largest cluster, ``ceil(w * K)`` clusters at a time.

    Each step scores every remaining cluster by the mean log-loss (against the
    benign label) of the current model, admits the lowest-loss ones (ties by
    id) and retrains. ``loss_before`` is a cluster's loss under the model that
    chose it and ``loss_after`` under the model retrained with it.
    ``on_iteration`` sees every model fit along with its training row ids.
    """
    layout = _BenignLayout(train, clustering)
    K = len(layout.ids)
    seed = clustering.largest_id
    trace = ScoringTrace(K, seed)
    trace.clusters[seed] = ClusterRecord(seed, clustering.cluster_sizes[seed], 1, 0)
    admitted = [seed]
    step = max(1, math.ceil(config.window_fraction * K - 1e-12))

    def fit(context: str):
        data = layout.training_set(admitted)
        model = _fit(data, config, context)
        if on_iteration:
            on_iteration(iteration, model, data.row_ids)
        return model

    iteration = 0
    model = fit("iteration 0")
    losses = layout.cluster_losses(model)
    trace.iterations.append(IterationRecord(0, [seed], 1 / K, {}))
    while len(admitted) < K:
        iteration += 1
        remaining = sorted((losses[c], c) for c in layout.ids if c not in trace.clusters)
        chosen = [c for _, c in remaining[:step]]
        for c in chosen:
            admitted.append(c)
            trace.clusters[c] = ClusterRecord(
                c, clustering.cluster_sizes[c], len(admitted), iteration, loss_before=losses[c]
            )
        model = fit(f"iteration {iteration}")
        new_losses = layout.cluster_losses(model)
        for c in chosen:
            trace.clusters[c].loss_after = new_losses[c]
        trace.iterations.append(
            IterationRecord(iteration, chosen, len(admitted) / K,
                            {c: losses[c] for _, c in remaining})
        )
        losses = new_losses
    return trace


# --- stage 4: flagging ---------------------------------------------------------


def flag_fixed_threshold(trace: ScoringTrace, threshold: float = 0.8) -> list[int]:
    """Clusters admitted after the first ``ceil(threshold * K)`` admissions."""
    order = trace.admission_order
    return order[trace.threshold_rank(threshold):]


@dataclass(frozen=True)
class ZScoreResult:
    suspicious: list[int]
    mean: float
    std: float
    scores: dict[int, float]
    degenerate: bool = False


def zscore_flags(
    deltas: dict[int, float], reference: Sequence[int], z_threshold: float
) -> ZScoreResult:
    """Flag ids whose ``(delta - mean) / std <= -z_threshold``.

    Mean and population std come from the ``reference`` ids only; zero spread
    flags nothing and warns.
    """
    ref = np.array([deltas[c] for c in reference], dtype=np.float64)
    if len(ref) < 2:
        raise DefenseError("z-score flagging needs at least two reference deltas")
    mu = float(ref.mean())
    sigma = float(ref.std())
    if sigma == 0.0 or not math.isfinite(sigma):
        warnings.warn("loss deltas have zero spread; z-score flags nothing", DefenseWarning,
                      stacklevel=2)
        return ZScoreResult([], mu, sigma, {}, degenerate=True)
    scores = {c: (d - mu) / sigma for c, d in deltas.items()}
    flagged = sorted(c for c, z in scores.items() if z <= -z_threshold)
    return ZScoreResult(flagged, mu, sigma, scores)


def flag_zscore(trace: ScoringTrace, z_threshold: float = 2.0,
                threshold: float = 0.8) -> ZScoreResult:
    """Z-scores of every cluster's delta against those admitted by the threshold."""
    deltas = trace.deltas()
    reference = [c for c in trace.admitted_within(threshold) if c in deltas]
    return zscore_flags(deltas, reference, z_threshold)


# --- stage 5: sanitization -------------------------------------------------------


def _suspicious_rows(layout: _BenignLayout, suspicious: Sequence[int]) -> np.ndarray:
    unknown = set(suspicious) - set(layout.ids)
    if unknown:
        raise DefenseError(f"unknown cluster ids {sorted(unknown)}")
    return layout.rows_of(suspicious)


def sanitize_filter(train: Dataset, suspicious: Sequence[int], clustering: Clustering) -> Dataset:
    """Drop every row of the suspicious clusters; malicious rows always stay."""
    layout = _BenignLayout(train, clustering)
    if set(suspicious) >= set(layout.ids):
        raise DefenseError("every cluster is suspicious; filtering would drop all benign rows")
    keep = np.ones(len(train), dtype=bool)
    keep[_suspicious_rows(layout, suspicious)] = False
    return layout.train.take(keep)


def sanitize_patch(
    train: Dataset,
    suspicious: Sequence[int],
    clustering: Clustering,
    patch_indices: Sequence[int],
    source: Dataset,
    seed: int,
) -> Dataset:
    """Overwrite the ``patch_indices`` columns of suspicious rows with those of a
    random benign donor row from ``source``, one donor per row.
    """
    layout = _BenignLayout(train, clustering)
    donors = source.features[source.labels == 0]
    if len(donors) == 0:
        raise DefenseError("patch source has no benign rows")
    rows = _suspicious_rows(layout, suspicious)
    cols = list(patch_indices)
    features = layout.train.features.copy()
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(donors), size=len(rows))
    features[np.ix_(rows, cols)] = donors[np.ix_(picks, cols)]
    return layout.train.with_features(features)


# --- diagnostics -----------------------------------------------------------------


@dataclass(frozen=True)
class PairwiseDiagnostic:
    cluster_ids: list[int]
    losses: np.ndarray  # (top_n + 1, top_n)

    def improvements(self) -> np.ndarray:
        """Loss drop of every column relative to the seed-only model, per added cluster."""
        return self.losses[0] - self.losses[1:]


def pairwise_loss_diagnostic(
    train: Dataset, clustering: Clustering, top_n: int, config: DefenseConfig = DefenseConfig()
) -> PairwiseDiagnostic:
    """Losses on the ``top_n`` hardest clusters for the seed-only model (row 0)
    and for seed-plus-one-cluster models (row i adds the i-th of those clusters).
    """
    layout = _BenignLayout(train, clustering)
    seed = clustering.largest_id
    others = [c for c in layout.ids if c != seed]
    if not 1 <= top_n <= len(others):
        raise DefenseError(f"top_n must lie in [1, {len(others)}]")
    base = _train(layout, [seed], config, "diagnostic base model")
    base_losses = layout.cluster_losses(base)
    hardest = sorted(others, key=lambda c: (-base_losses[c], c))[:top_n]
    matrix = np.empty((top_n + 1, top_n))
    matrix[0] = [base_losses[c] for c in hardest]
    for i, c in enumerate(hardest, start=1):
        model = _train(layout, [seed, c], config, f"diagnostic row {i}")
        losses = layout.cluster_losses(model)
        matrix[i] = [losses[j] for j in hardest]
    return PairwiseDiagnostic(hardest, matrix)


# --- full pipeline -----------------------------------------------------------------


@dataclass
class SanitizationReport:
    flag_mode: str
    sanitize_mode: str
    suspicious_cluster_ids: list[int]
    rows_discarded: int
    rows_patched: int
    cluster_features: list[int]
    patch_features: list[int]
    n_clusters: int
    seed_cluster_size: int
    n_benign: int
    z_mean: Optional[float] = None
    z_std: Optional[float] = None
    zscore_degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DefenseResult:
    model: TrainedClassifier
    trace: ScoringTrace
    report: SanitizationReport
    clean_data: Dataset
    clustering: Clustering
    reachability: ReachabilityResult

    def __iter__(self):
        # (model, trace, report, clean_data) unpacking
        return iter((self.model, self.trace, self.report, self.clean_data))


@dataclass
class ScoredTrainingSet:
    """Everything up to and including iterative scoring, reusable across
    flagging and sanitization choices."""

    train: Dataset
    feature_order: list[int]
    cluster_features: list[int]
    clustering: Clustering
    reachability: ReachabilityResult
    trace: ScoringTrace


def score_training_set(
    train: Dataset,
    config: DefenseConfig = DefenseConfig(),
    on_iteration: Optional[IterationHook] = None,
) -> ScoredTrainingSet:
    """Rank features, cluster the benign rows and run iterative scoring."""
    train = train.blind()
    if len(np.unique(train.labels)) < 2:
        raise DefenseError("training data needs both classes")
    order, importances = rank_features(train, max_depth=config.importance_depth)
    if not importances.any():
        raise DefenseError("feature importances are all zero; increase the importance tree depth")
    order = [int(i) for i in order]
    cluster_features = order[: config.n_cluster_features]
    reduced = select_columns(train.take(train.labels == 0), cluster_features)
    try:
        clustering, reach = cluster_benign(reduced, config.optics)
    except ValueError as exc:
        raise DefenseError(f"clustering failed: {exc}") from exc
    trace = iterative_scoring(train, clustering, config, on_iteration)
    return ScoredTrainingSet(train, order, cluster_features, clustering, reach, trace)


def finish_defense(scored: ScoredTrainingSet, config: DefenseConfig = DefenseConfig()) -> DefenseResult:
    """Flag, sanitize and fit the final model on a scored training set."""
    train, trace, clustering = scored.train, scored.trace, scored.clustering
    patch_features = scored.feature_order[: config.n_patch_features]
    K = trace.n_clusters
    z_mean = z_std = None
    degenerate = False
    if config.flag_mode == "fixed_threshold":
        suspicious = flag_fixed_threshold(trace, config.fixed_threshold)
    elif len(trace.admitted_within(config.fixed_threshold)) - 1 < 2:
        suspicious = []
        degenerate = True
        warnings.warn("too few clusters for z-score flagging", DefenseWarning, stacklevel=2)
    else:
        z = flag_zscore(trace, config.z_threshold, config.fixed_threshold)
        suspicious, z_mean, z_std, degenerate = z.suspicious, z.mean, z.std, z.degenerate

    layout = _BenignLayout(train, clustering)
    n_flagged_rows = len(layout.rows_of(suspicious))
    if config.sanitize_mode == "filter":
        clean = sanitize_filter(train, suspicious, clustering)
        discarded, patched = n_flagged_rows, 0
    else:
        source = layout.training_set(trace.admitted_within(config.fixed_threshold))
        clean = sanitize_patch(train, suspicious, clustering, patch_features, source, config.seed)
        discarded, patched = 0, n_flagged_rows
    try:
        model = train_surrogate(clean, config.surrogate_kind, config.surrogate_config)
    except (ModelError, ValueError) as exc:
        raise DefenseError(f"final model training failed: {exc}") from exc
    report = SanitizationReport(
        flag_mode=config.flag_mode,
        sanitize_mode=config.sanitize_mode,
        suspicious_cluster_ids=[int(c) for c in suspicious],
        rows_discarded=discarded,
        rows_patched=patched,
        cluster_features=list(scored.cluster_features),
        patch_features=list(patch_features),
        n_clusters=K,
        seed_cluster_size=clustering.cluster_sizes[clustering.largest_id],
        n_benign=len(layout.benign_rows),
        z_mean=z_mean,
        z_std=z_std,
        zscore_degenerate=degenerate,
    )
    return DefenseResult(model, trace, report, clean, clustering, scored.reachability)


def run_defense(
    train: Dataset,
    config: DefenseConfig = DefenseConfig(),
    on_iteration: Optional[IterationHook] = None,
) -> DefenseResult:
    """Cluster, score, flag, sanitize and fit the final model.

    The final model sees the seed cluster, the sanitized remainder and all
    malicious rows; ``clean_data`` is exactly that training set.
    """
    return finish_defense(score_training_set(train, config, on_iteration), config)
