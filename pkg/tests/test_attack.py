import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cleansweep.attack import (
    AttackConfig,
    AttackError,
    TriggerSpec,
    benign_mode_value,
    design_trigger,
    inject_poison,
    make_backdoored_test,
    min_population_value,
    poison_count,
    select_trigger_features,
    select_trigger_values,
)
from cleansweep.ingest import SyntheticConfig, generate_synthetic, informative_indices
from conftest import make_dataset
from oracles import histogram_min_population


def test_min_population_sparse_upper_region():
    column = np.array([0.0] * 99 + [10.0])
    value = min_population_value(column)
    assert value == pytest.approx(histogram_min_population(column.tolist()))
    assert value > 9.0


def test_min_population_matches_hand_count_on_random_columns():
    rng = np.random.default_rng(5)
    for _ in range(30):
        column = np.round(rng.standard_normal(int(rng.integers(2, 300))) * 3, 3)
        bins = int(rng.integers(2, 40))
        assert min_population_value(column, bins) == pytest.approx(
            histogram_min_population(column.tolist(), bins), abs=1e-12)


def test_min_population_lowest_bin_on_ties():
    # bins 0 and 3 each hold one value, bins 1 and 2 are empty
    assert min_population_value(np.array([0.0, 4.0]), bins=4) == pytest.approx(0.5)


def test_constant_feature_returns_its_value():
    assert min_population_value(np.full(10, 2.5)) == 2.5


def test_benign_mode():
    assert benign_mode_value(np.array([1.0, 1.0, 2.0])) == 1.0
    data = make_dataset([[1.0], [1.0], [2.0], [7.0], [7.0], [7.0]], [0, 0, 0, 1, 1, 1])
    assert select_trigger_values(data, [0], "benign_mode") == [1.0]


def test_trigger_features_are_the_informative_axes():
    cfg = SyntheticConfig(n_rows=4000, n_features=20, n_informative=4, seed=2)
    data = generate_synthetic(cfg)
    assert set(select_trigger_features(data, 4)) == set(informative_indices(cfg))


def test_all_features_in_importance_order(blobs):
    picked = select_trigger_features(blobs, blobs.n_features)
    assert sorted(picked) == list(range(blobs.n_features))
    assert set(picked[:2]) == {0, 1}


def test_trigger_feature_errors(blobs):
    with pytest.raises(AttackError):
        select_trigger_features(blobs, blobs.n_features + 1)
    single = make_dataset(np.arange(10.0), np.zeros(10, int))
    with pytest.raises(AttackError, match="zero"):
        select_trigger_features(single, 1)


def test_trigger_spec_validation_and_round_trip():
    with pytest.raises(AttackError):
        TriggerSpec((1, 1), (0.0, 1.0))
    with pytest.raises(AttackError):
        TriggerSpec((1, 2), (0.0,))
    spec = TriggerSpec((3, 0), (1.5, -2.0))
    assert TriggerSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kwargs", [
    {"trigger_size": 0}, {"poison_rate": 0.0}, {"poison_rate": 0.2}, {"value_strategy": "shap"},
])
def test_attack_config_invariants(kwargs):
    with pytest.raises(AttackError):
        AttackConfig(**kwargs)


def poisonable(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 6))
    y = (rng.random(n) < 0.4).astype(int)
    return make_dataset(X, y)


def test_inject_count_and_clean_label():
    train = poisonable()
    trigger = TriggerSpec((1, 4), (9.0, -9.0))
    poisoned, ids = inject_poison(train, trigger, 0.01, seed=3)
    changed = (poisoned.features != train.features).any(axis=1)
    assert changed.sum() == 10 == len(ids)
    assert poisoned.poison_mask.sum() == 10
    assert (poisoned.labels[poisoned.poison_mask] == 0).all()
    np.testing.assert_array_equal(poisoned.labels, train.labels)
    np.testing.assert_array_equal(poisoned.row_ids[poisoned.poison_mask], ids)


def test_inject_leaves_other_cells_bit_exact():
    train = poisonable()
    trigger = TriggerSpec((1, 4), (9.0, -9.0))
    poisoned, _ = inject_poison(train, trigger, 0.05, seed=1)
    rest = [0, 2, 3, 5]
    assert poisoned.features[:, rest].tobytes() == train.features[:, rest].tobytes()
    clean_rows = ~poisoned.poison_mask
    assert poisoned.features[clean_rows].tobytes() == train.features[clean_rows].tobytes()
    assert (poisoned.features[poisoned.poison_mask][:, [1, 4]] == [9.0, -9.0]).all()


def test_inject_is_seeded():
    train = poisonable()
    trigger = TriggerSpec((0,), (5.0,))
    a = inject_poison(train, trigger, 0.02, seed=8)[1]
    b = inject_poison(train, trigger, 0.02, seed=8)[1]
    c = inject_poison(train, trigger, 0.02, seed=9)[1]
    assert a.tolist() == b.tolist() != c.tolist()


def test_inject_errors():
    trigger = TriggerSpec((0,), (5.0,))
    with pytest.raises(AttackError, match="no poison"):
        inject_poison(poisonable(100), trigger, 0.001, seed=0)
    few_benign = make_dataset(np.zeros((100, 2)), [0] * 2 + [1] * 98)
    with pytest.raises(AttackError, match="benign"):
        inject_poison(few_benign, trigger, 0.05, seed=0)


@given(st.integers(1, 5000), st.floats(0.001, 0.1))
def test_poison_count_is_floor(n, rate):
    k = poison_count(n, rate)
    assert k <= rate * n + 1e-6 and k + 1 > rate * n - 1e-6


def test_poison_count_resists_float_error():
    assert poison_count(100, 0.07) == 7


def test_backdoored_test_set():
    X = np.random.default_rng(0).standard_normal((100, 4))
    test = make_dataset(X, [1] * 20 + [0] * 80)
    trigger = TriggerSpec((2, 0), (3.0, -1.0))
    backdoored = make_backdoored_test(test, trigger)
    assert len(backdoored) == 20 and (backdoored.labels == 1).all()
    assert (backdoored.features[:, [2, 0]] == [3.0, -1.0]).all()
    np.testing.assert_array_equal(backdoored.features[:, [1, 3]], X[:20][:, [1, 3]])
    again = make_backdoored_test(backdoored, trigger)
    assert again.features.tobytes() == backdoored.features.tobytes()


def test_backdoored_test_needs_malicious_rows():
    with pytest.raises(AttackError):
        make_backdoored_test(make_dataset(np.zeros((5, 2)), [0] * 5), TriggerSpec((0,), (1.0,)))


def test_design_trigger_poisons_collapse_on_trigger_features():
    train = generate_synthetic(SyntheticConfig(n_rows=3000, seed=4))
    trigger = design_trigger(train, AttackConfig(poison_rate=0.02, seed=4))
    poisoned, _ = inject_poison(train, trigger, 0.02, seed=4)
    sub = poisoned.features[poisoned.poison_mask][:, list(trigger.feature_indices)]
    assert (np.ptp(sub, axis=0) == 0).all()
    assert trigger.selection_strategy == "entropy" and len(trigger.values) == 4
