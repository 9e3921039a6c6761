import numpy as np
import pytest

from fagh.data import synth_classification
from fagh.metrics import (
    CSV_HEADER,
    RoundRecord,
    evaluate_global,
    format_rounds,
    read_csv,
    rounds_to_target,
    write_csv,
)
from fagh.models import ModelSpec, gradient


def rec(round, acc, fallback=False):
    return RoundRecord(round=round, train_loss=1.0, test_loss=1.1,
                       test_accuracy=acc, wall_time_s=0.01,
                       uplink_scalars=84, downlink_scalars=40,
                       fallback=fallback)


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_zero_weights_gives_log_C():
    train = synth_classification(seed=0, n=100, input_dim=3, num_classes=5,
                                 separation=1.0)
    test = synth_classification(seed=0, n=50, input_dim=3, num_classes=5,
                                separation=1.0, split="test")
    spec = ModelSpec("mlr", input_dim=3, num_classes=5)
    tr, te, _ = evaluate_global(spec, np.zeros(spec.param_count), train, test)
    assert tr == pytest.approx(np.log(5), rel=1e-12)
    assert te == pytest.approx(np.log(5), rel=1e-12)


def test_evaluate_identical_splits_have_equal_losses():
    ds = synth_classification(seed=1, n=80, input_dim=3, num_classes=2,
                              separation=1.0)
    spec = ModelSpec("mlr", input_dim=3, num_classes=2)
    w = np.random.default_rng(0).normal(size=spec.param_count)
    tr, te, _ = evaluate_global(spec, w, ds, ds)
    assert tr == te


def test_evaluate_fitted_separable_reaches_high_accuracy():
    train = synth_classification(seed=2, n=300, input_dim=2, num_classes=2,
                                 separation=10.0)
    test = synth_classification(seed=2, n=200, input_dim=2, num_classes=2,
                                separation=10.0, split="test")
    spec = ModelSpec("mlr", input_dim=2, num_classes=2)
    w = np.zeros(spec.param_count)
    batch = train.to_batch()
    for _ in range(300):
        w = w - 0.5 * gradient(spec, w, batch)
    _, _, acc = evaluate_global(spec, w, train, test)
    assert acc >= 0.99


def test_evaluate_is_pure():
    ds = synth_classification(seed=3, n=60, input_dim=3, num_classes=2,
                              separation=1.0)
    spec = ModelSpec("mlr", input_dim=3, num_classes=2)
    w = np.random.default_rng(1).normal(size=spec.param_count)
    assert evaluate_global(spec, w, ds, ds) == evaluate_global(spec, w, ds, ds)


# ---------------------------------------------------------------------------
# rounds to target


def test_rounds_to_target_first_crossing():
    # constructed stream crossing 0.30 first at round 18
    records = [rec(r, 0.31 if r >= 18 else 0.015 * r) for r in range(1, 25)]
    assert rounds_to_target(records, [0.30]) == [18]


def test_rounds_to_target_unreached_and_zero():
    records = [rec(1, 0.1), rec(2, 0.2)]
    assert rounds_to_target(records, [0.9]) == [None]
    assert format_rounds(None) == "..."
    assert rounds_to_target(records, [0.0]) == [1]


def test_rounds_to_target_monotone_in_target():
    rng = np.random.default_rng(4)
    accs = np.clip(np.cumsum(rng.uniform(-0.01, 0.05, size=50)), 0, 1)
    records = [rec(i + 1, a) for i, a in enumerate(accs)]
    targets = [0.1, 0.2, 0.3, 0.5, 0.7]
    out = rounds_to_target(records, targets)
    reached = [r for r in out if r is not None]
    assert reached == sorted(reached)
    # anything after the first None stays None
    if None in out:
        tail = out[out.index(None):]
        assert all(r is None for r in tail)


def test_rounds_to_target_requires_sorted_records():
    with pytest.raises(ValueError):
        rounds_to_target([rec(2, 0.1), rec(1, 0.2)], [0.1])


# ---------------------------------------------------------------------------
# CSV


def test_write_csv_empty_is_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_csv([], path)
    assert path.read_text() == CSV_HEADER + "\n"


def test_csv_roundtrip_single_record(tmp_path):
    path = tmp_path / "one.csv"
    record = RoundRecord(round=3, train_loss=0.123456789123, test_loss=2.5,
                         test_accuracy=0.875, wall_time_s=0.25,
                         uplink_scalars=84, downlink_scalars=40, fallback=True)
    write_csv([record], path)
    back = read_csv(path)
    assert len(back) == 1
    got = back[0]
    assert got.round == 3 and got.fallback is True
    assert got.train_loss == pytest.approx(record.train_loss, rel=1e-8)
    assert got.test_accuracy == record.test_accuracy
    assert got.uplink_scalars == 84


def test_csv_deterministic_bytes(tmp_path):
    records = [rec(r, 0.01 * r) for r in range(1, 6)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(records, p1)
    write_csv(records, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_read_csv_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nonsense\n")
    with pytest.raises(ValueError):
        read_csv(path)
    path.write_text(CSV_HEADER + "\n1,2,3\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_write_csv_propagates_path_in_error(tmp_path):
    bad = tmp_path / "missing_dir" / "out.csv"
    with pytest.raises(OSError, match="out.csv"):
        write_csv([], bad)


def test_round_record_validation():
    with pytest.raises(ValueError):
        rec(1, 1.5)
    with pytest.raises(ValueError):
        RoundRecord(round=1, train_loss=0.0, test_loss=0.0, test_accuracy=0.5,
                    wall_time_s=0.0, uplink_scalars=-1, downlink_scalars=0)
