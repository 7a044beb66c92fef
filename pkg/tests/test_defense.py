import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cleansweep.attack import AttackConfig, design_trigger, inject_poison, make_backdoored_test
from cleansweep.clustering import Clustering, OpticsParams
from cleansweep.core import Dataset, split_dataset
from cleansweep.defense import (
    DefenseConfig,
    DefenseError,
    DefenseWarning,
    ScoredTrainingSet,
    ScoringTrace,
    ClusterRecord,
    cluster_benign,
    finish_defense,
    flag_fixed_threshold,
    flag_zscore,
    iterative_scoring,
    pairwise_loss_diagnostic,
    reduce_dimensionality,
    run_defense,
    sanitize_filter,
    sanitize_patch,
    score_training_set,
    zscore_flags,
)
from cleansweep.ingest import SyntheticConfig, generate_synthetic
from cleansweep.models import GbdtConfig, compute_metrics, predict_proba, train_surrogate
from conftest import make_dataset
from oracles import zscore_reference

FAST = DefenseConfig(surrogate_config=GbdtConfig(n_rounds=15, max_depth=3))


# --- toy layout: ten hand-labeled benign clusters plus a malicious blob ----------


def toy(n_small=9, seed=0):
    rng = np.random.default_rng(seed)
    parts, labels = [rng.normal(0, 0.3, (100, 2))], [np.zeros(100, int)]
    for c in range(1, n_small + 1):
        center = 2.5 * np.array([math.cos(c), math.sin(c)])
        parts.append(center + rng.normal(0, 0.2, (10, 2)))
        labels.append(np.full(10, c))
    benign = np.vstack(parts)
    malicious = rng.normal(6, 0.5, (100, 2))
    X = np.vstack([benign, malicious])
    y = np.r_[np.zeros(len(benign), int), np.ones(100, int)]
    order = rng.permutation(len(X))
    data = make_dataset(X[order], y[order])
    cluster_of_row = np.r_[np.concatenate(labels), np.full(100, -1)][order]
    return data, Clustering(cluster_of_row[data.labels == 0])


def test_scoring_admits_every_cluster_once():
    data, clustering = toy()
    trace = iterative_scoring(data, clustering, FAST)
    assert trace.n_clusters == 10 and trace.seed_cluster == 0
    assert sorted(trace.admission_order) == list(range(10))
    assert [trace.clusters[c].admission_rank for c in trace.admission_order] == list(range(1, 11))
    assert set(trace.deltas()) == set(range(1, 10))
    assert all(math.isfinite(d) for d in trace.deltas().values())
    fractions = [it.fraction_included for it in trace.iterations]
    assert all(a < b for a, b in zip(fractions, fractions[1:])) and fractions[-1] == 1.0
    # ceil(0.05 * 10) = 1 cluster per step
    assert len(trace.iterations) == 10
    assert all(len(it.admitted) == 1 for it in trace.iterations[1:])


def test_scoring_admits_lowest_loss_and_records_losses():
    data, clustering = toy()
    trace = iterative_scoring(data, clustering, FAST)
    for prev, it in zip(trace.iterations[1:], trace.iterations[2:]):
        # the admitted cluster had the lowest loss among those remaining
        (c,) = it.admitted
        losses = it.remaining_losses
        assert min(losses.values()) == losses[c]
        assert trace.clusters[c].loss_before == losses[c]
        assert c not in prev.remaining_losses or prev.admitted[0] != c


def test_window_one_admits_everything_at_once():
    data, clustering = toy()
    trace = iterative_scoring(data, clustering, DefenseConfig(
        window_fraction=1.0, surrogate_config=FAST.surrogate_config))
    assert len(trace.iterations) == 2
    assert sorted(trace.iterations[1].admitted) == list(range(1, 10))


def test_single_cluster_gives_empty_loop():
    data, _ = toy()
    clustering = Clustering(np.zeros(int((data.labels == 0).sum()), int))
    trace = iterative_scoring(data, clustering, FAST)
    assert trace.n_clusters == 1 and len(trace.iterations) == 1
    assert trace.deltas() == {} and flag_fixed_threshold(trace) == []


def test_single_cluster_defense_trains_on_everything():
    data, _ = toy()
    clustering = Clustering(np.zeros(int((data.labels == 0).sum()), int))
    trace = iterative_scoring(data, clustering, FAST)
    scored = ScoredTrainingSet(data, [0, 1], [0, 1], clustering, None, trace)
    result = finish_defense(scored, FAST)
    assert len(result.clean_data) == len(data)
    with pytest.warns(DefenseWarning):
        zres = finish_defense(scored, DefenseConfig(flag_mode="zscore",
                                                    surrogate_config=FAST.surrogate_config))
    assert zres.report.suspicious_cluster_ids == [] and zres.report.zscore_degenerate


def test_iteration_hook_sees_every_fit():
    data, clustering = toy()
    calls = []
    iterative_scoring(data, clustering, FAST,
                      on_iteration=lambda i, model, rows: calls.append((i, len(rows))))
    assert [i for i, _ in calls] == list(range(10))
    assert [n for _, n in calls] == [200 + 10 * i for i in range(10)]


def test_trace_csv_layout(tmp_path):
    data, clustering = toy()
    trace = iterative_scoring(data, clustering, FAST)
    path = tmp_path / "trace.csv"
    trace.to_csv(path, extra={0: {"asr": 0.5}})
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    kinds = [r["record"] for r in rows]
    assert kinds.count("iteration") == 10 and kinds.count("cluster") == 10
    assert rows[0]["asr"] == "0.5" and rows[1]["asr"] == ""
    seed_row = next(r for r in rows if r["record"] == "cluster" and r["admission_rank"] == "1")
    assert seed_row["delta"] == ""


# --- flagging ------------------------------------------------------------------


def ranked_trace(k):
    trace = ScoringTrace(k, 0)
    for rank in range(1, k + 1):
        trace.clusters[rank - 1] = ClusterRecord(rank - 1, 5, rank, rank - 1)
    return trace


def test_fixed_threshold_flags_last_two_of_ten():
    assert flag_fixed_threshold(ranked_trace(10), 0.8) == [8, 9]


def test_fixed_threshold_one_flags_nothing():
    assert flag_fixed_threshold(ranked_trace(10), 1.0) == []


@given(st.integers(1, 200), st.floats(0.01, 1.0))
def test_fixed_threshold_count(k, t):
    flagged = flag_fixed_threshold(ranked_trace(k), t)
    assert len(flagged) == k - math.ceil(t * k - 1e-12)


def test_zscore_isolates_the_large_drop():
    rng = np.random.default_rng(0)
    deltas = {i: float(-1 + rng.uniform(-0.1, 0.1)) for i in range(20)}
    deltas.update({0: -1.0, 1: -1.1, 2: -0.9, 20: -9.0})
    result = zscore_flags(deltas, list(deltas), 2.0)
    assert result.suspicious == [20]


def test_zscore_five_sigma_value_matches_oracle():
    ref = {i: v for i, v in enumerate([1.0, -1.0] * 10)}  # mean 0, population std 1
    deltas = {**ref, 99: -5.0}
    result = zscore_flags(deltas, list(ref), 2.0)
    assert result.suspicious == [99]
    assert (result.mean, result.std) == (0.0, 1.0)
    assert result.scores[99] == -5.0


def test_zscore_equal_deltas_flag_nothing_with_warning():
    with pytest.warns(DefenseWarning):
        result = zscore_flags({i: -0.3 for i in range(8)}, list(range(8)), 2.0)
    assert result.suspicious == [] and result.degenerate


def test_zscore_huge_threshold_flags_nothing():
    deltas = {i: float(i) for i in range(10)}
    assert zscore_flags(deltas, list(deltas), 1e9).suspicious == []


def test_zscore_needs_two_reference_deltas():
    with pytest.raises(DefenseError):
        zscore_flags({1: 0.0, 2: 1.0}, [1], 2.0)


@given(st.dictionaries(st.integers(0, 50), st.floats(-5, 5), min_size=3, max_size=30),
       st.floats(0.5, 3.0))
def test_zscore_matches_reference(deltas, z):
    reference = sorted(deltas)[: max(2, len(deltas) * 4 // 5)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DefenseWarning)
        got = zscore_flags(deltas, reference, z)
    want, mu, sigma = zscore_reference(deltas, reference, z)
    assert got.mean == pytest.approx(mu, abs=1e-9)
    assert got.std == pytest.approx(sigma, abs=1e-9)
    if sigma > 1e-6:
        # scores within float noise of the threshold may land either side
        borderline = {c for c, d in deltas.items() if abs((d - mu) / sigma + z) < 1e-6}
        assert set(got.suspicious) ^ set(want) <= borderline


def test_flag_zscore_uses_first_admissions_as_reference():
    trace = ranked_trace(11)
    for c, rec in trace.clusters.items():
        rec.loss_before, rec.loss_after = 1.0, 1.0 - (0.1 if c % 2 else 0.2)
    trace.clusters[10].loss_after = -50.0
    result = flag_zscore(trace, 2.0, 0.8)
    # ceil(0.8 * 11) = 9 admissions, the seed has no delta
    assert result.mean == pytest.approx(-0.15)
    assert result.suspicious == [10]


# --- sanitization ----------------------------------------------------------------


def test_filter_removes_exactly_the_suspicious_rows():
    data, clustering = toy()
    clean = sanitize_filter(data, [3, 7], clustering)
    assert len(clean) == len(data) - 20
    assert (clean.labels == 1).sum() == (data.labels == 1).sum()
    assert clean.poison_mask is None


def test_filter_with_nothing_flagged_is_identity():
    data, clustering = toy()
    clean = sanitize_filter(data, [], clustering)
    assert clean.features.tobytes() == data.features.tobytes()
    assert clean.row_ids.tolist() == data.row_ids.tolist()


def test_filter_refuses_to_drop_every_cluster():
    data, clustering = toy()
    with pytest.raises(DefenseError):
        sanitize_filter(data, list(range(10)), clustering)
    with pytest.raises(DefenseError):
        sanitize_filter(data, [42], clustering)


def test_patch_copies_whole_donor_rows_on_patch_columns():
    rng = np.random.default_rng(1)
    data, clustering = toy()
    wide = make_dataset(np.c_[data.features, rng.standard_normal((len(data), 4))], data.labels)
    source = wide.take(np.flatnonzero(wide.labels == 0)[:50])
    patched = sanitize_patch(wide, [2, 5], clustering, [0, 1, 4], source, seed=3)
    assert len(patched) == len(wide)
    assert patched.labels.tobytes() == wide.labels.tobytes()
    assert patched.features[:, [2, 3, 5]].tobytes() == wide.features[:, [2, 3, 5]].tobytes()
    changed = np.flatnonzero((patched.features != wide.features).any(axis=1))
    benign_rows = np.flatnonzero(wide.labels == 0)
    flagged = benign_rows[np.isin(clustering.labels, [2, 5])]
    assert set(changed) <= set(flagged)
    donors = {tuple(r) for r in source.features[:, [0, 1, 4]]}
    assert all(tuple(patched.features[r, [0, 1, 4]]) in donors for r in flagged)


def test_patch_is_seeded_and_needs_a_source():
    data, clustering = toy()
    source = data.take(data.labels == 0)
    a = sanitize_patch(data, [1], clustering, [0, 1], source, seed=5)
    b = sanitize_patch(data, [1], clustering, [0, 1], source, seed=5)
    assert a.features.tobytes() == b.features.tobytes()
    with pytest.raises(DefenseError):
        sanitize_patch(data, [1], clustering, [0, 1], data.take(data.labels == 1), seed=5)


# --- diagnostics and configuration ----------------------------------------------


def test_pairwise_top_one_is_two_by_one():
    data, clustering = toy()
    diag = pairwise_loss_diagnostic(data, clustering, 1, FAST)
    assert diag.losses.shape == (2, 1) and diag.improvements().shape == (1, 1)
    with pytest.raises(DefenseError):
        pairwise_loss_diagnostic(data, clustering, 10, FAST)


def test_defense_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        DefenseConfig(n_cluster_features=8, n_patch_features=4)
    with pytest.raises(ValueError):
        DefenseConfig(flag_mode="median")
    cfg = DefenseConfig(flag_mode="zscore", sanitize_mode="patch",
                        surrogate_config=GbdtConfig(n_rounds=7),
                        optics=OpticsParams(min_samples=7))
    assert DefenseConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["optics"]["max_eps"] is None


def test_reduce_dimensionality(blobs):
    reduced, idx = reduce_dimensionality(blobs, blobs.n_features)
    assert sorted(idx) == list(range(blobs.n_features))
    assert len(reduced) == int((blobs.labels == 0).sum())
    reduced, idx = reduce_dimensionality(blobs, 2)
    assert set(idx) == {0, 1} and reduced.n_features == 2
    single = make_dataset(np.random.default_rng(0).standard_normal((20, 3)), [0] * 20)
    with pytest.raises(DefenseError, match="depth"):
        reduce_dimensionality(single, 2)


def test_cluster_benign_warns_on_small_seed_cluster():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], float)
    X = np.vstack([c + rng.normal(0, 0.3, (40, 2)) for c in centers])
    with pytest.warns(DefenseWarning):
        clustering, _ = cluster_benign(make_dataset(X, np.zeros(len(X), int)))
    assert len(clustering.ids) >= 4


def test_defense_is_blind_to_poison_mask():
    data, _ = toy()
    X = data.features
    masked = Dataset(X, data.labels, data.feature_names, data.row_ids,
                     (np.random.default_rng(0).random(len(X)) < 0.3) & (data.labels == 0))
    a = run_defense(masked, FAST)
    b = run_defense(make_dataset(X, data.labels), FAST)
    assert a.report == b.report
    assert a.clean_data.poison_mask is None
    assert a.clean_data.features.tobytes() == b.clean_data.features.tobytes()


def test_run_defense_is_deterministic():
    data, _ = toy(seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DefenseWarning)
        a, b = run_defense(data, FAST), run_defense(data, FAST)
    assert a.report.to_dict() == b.report.to_dict()
    assert a.trace.deltas() == b.trace.deltas()


def test_defense_needs_both_classes():
    with pytest.raises(DefenseError):
        run_defense(make_dataset(np.zeros((10, 2)), [0] * 10), FAST)


# --- fixture runs on poisoned and clean synthetic data ---------------------------

FIXTURE_SEED = 3
FIXTURE_RATE = 0.02


@pytest.fixture(scope="module")
def poisoned_run():
    data = generate_synthetic(SyntheticConfig(n_rows=4000, seed=FIXTURE_SEED))
    train, test = split_dataset(data, 0.25, FIXTURE_SEED)
    trigger = design_trigger(train, AttackConfig(poison_rate=FIXTURE_RATE, seed=FIXTURE_SEED))
    poisoned, poison_ids = inject_poison(train, trigger, FIXTURE_RATE, FIXTURE_SEED)
    scored = score_training_set(poisoned)
    benign_mask = poisoned.poison_mask[poisoned.labels == 0]
    poison_labels = scored.clustering.labels[benign_mask]
    poison_cluster = int(np.bincount(poison_labels).argmax())
    return dict(train=train, test=test, trigger=trigger, poisoned=poisoned,
                poison_ids=poison_ids, scored=scored, poison_labels=poison_labels,
                poison_cluster=poison_cluster)


@pytest.fixture(scope="module")
def clean_run():
    data = generate_synthetic(SyntheticConfig(n_rows=4000, seed=FIXTURE_SEED))
    train, test = split_dataset(data, 0.25, FIXTURE_SEED)
    return dict(train=train, test=test, scored=score_training_set(train))


def backdoor_asr(run, model):
    clean = train_surrogate(run["train"])
    backdoored = make_backdoored_test(run["test"], run["trigger"])
    caught = predict_proba(clean, backdoored) >= 0.5
    return float(((predict_proba(model, backdoored) < 0.5) & caught).sum() / caught.sum())


def diagonal_only(diag, column, share=0.1):
    """Only the cluster's own row improves its column; others gain under ``share`` of that."""
    imp = diag.improvements()[:, column]
    own = imp[column]
    return own > 0 and np.abs(np.delete(imp, column)).max() < share * own


@pytest.mark.slow
def test_poisons_share_one_cluster(poisoned_run):
    labels = poisoned_run["poison_labels"]
    assert (labels == poisoned_run["poison_cluster"]).mean() >= 0.9


@pytest.mark.slow
def test_poison_cluster_is_admitted_last_and_flagged(poisoned_run):
    trace = poisoned_run["scored"].trace
    c = poisoned_run["poison_cluster"]
    assert trace.clusters[c].admission_rank > trace.threshold_rank(0.8)
    assert c in flag_fixed_threshold(trace, 0.8)


@pytest.mark.slow
def test_poison_cluster_has_the_largest_loss_drop(poisoned_run):
    deltas = poisoned_run["scored"].trace.deltas()
    assert min(deltas, key=deltas.get) == poisoned_run["poison_cluster"]


@pytest.mark.slow
def test_filter_removes_the_poisons(poisoned_run):
    result = finish_defense(poisoned_run["scored"])
    kept = np.isin(poisoned_run["poison_ids"], result.clean_data.row_ids).mean()
    assert kept <= 0.05
    assert backdoor_asr(poisoned_run, result.model) <= 0.05


@pytest.mark.slow
def test_patch_halves_the_attack(poisoned_run):
    undefended = train_surrogate(poisoned_run["poisoned"])
    patched = finish_defense(poisoned_run["scored"], DefenseConfig(sanitize_mode="patch"))
    assert len(patched.clean_data) == len(poisoned_run["poisoned"])
    assert backdoor_asr(poisoned_run, patched.model) <= backdoor_asr(poisoned_run, undefended) / 2


@pytest.mark.slow
def test_pairwise_poison_column_is_diagonal_only(poisoned_run):
    scored = poisoned_run["scored"]
    diag = pairwise_loss_diagnostic(poisoned_run["poisoned"], scored.clustering, 20)
    assert poisoned_run["poison_cluster"] in diag.cluster_ids
    assert diagonal_only(diag, diag.cluster_ids.index(poisoned_run["poison_cluster"]))


@pytest.mark.slow
def test_clean_seed_cluster_is_a_majority(clean_run):
    clustering = clean_run["scored"].clustering
    benign = int((clean_run["train"].labels == 0).sum())
    assert clustering.cluster_sizes[clustering.largest_id] / benign >= 0.5


@pytest.mark.slow
def test_clean_pairwise_has_no_diagonal_only_column(clean_run):
    diag = pairwise_loss_diagnostic(clean_run["train"], clean_run["scored"].clustering, 20)
    assert not any(diagonal_only(diag, j) for j in range(len(diag.cluster_ids)))


@pytest.mark.slow
def test_clean_defense_keeps_utility(clean_run):
    test = clean_run["test"]
    defended = finish_defense(clean_run["scored"]).model
    full = train_surrogate(clean_run["train"])
    f1 = [compute_metrics(predict_proba(m, test), test.labels).f1 for m in (defended, full)]
    assert abs(f1[0] - f1[1]) <= 0.03
