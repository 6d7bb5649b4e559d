import numpy as np
import pytest

from gaitstream.errors import AdaptError, PartitionError
from gaitstream.features import FeatureTable
from gaitstream.learn import adapt_model, adaptation_split, cross_validate, train
from gaitstream.learn.validation import folds_for


def toy_table(n_subjects=3, rounds=4, per_round=30, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_subjects):
        shift = s * 0.8
        for r in range(1, rounds + 1):
            for i in range(per_round):
                label = "turning" if (i // 5) % 2 else "forward"
                x = rng.normal(size=3) + (2.0 if label == "turning" else 0.0) + shift
                rows.append((x, label, f"S{s + 1:02d}", r, i * 0.1))
    X = np.array([r[0] for r in rows])
    return FeatureTable(X, ["a", "b", "c"], np.array([r[1] for r in rows]), np.array([r[2] for r in rows]),
                        np.full(len(rows), 3), np.array([r[3] for r in rows]), np.array([r[1] for r in rows]),
                        np.array([r[4] for r in rows]), "movement")


@pytest.mark.parametrize("strategy", ["loso", "leave-two-rounds-out"])
def test_folds_partition_rows(strategy):
    t = toy_table()
    folds = folds_for(t, strategy)
    seen = np.concatenate([te for _, _, te in folds])
    assert sorted(seen.tolist()) == list(range(len(t)))
    for _, tr, te in folds:
        assert not set(tr.tolist()) & set(te.tolist())


def test_leave_two_rounds_out_structure():
    t = toy_table(rounds=10, per_round=10)
    folds = folds_for(t, "leave_two_rounds_out")
    assert len(folds) == 3 * 5
    held, tr, te = folds[0]
    assert held == ("S01", 1, 2)
    assert set(t.subject_id[tr].tolist()) == {"S01"}
    assert set(t.round_index[te].tolist()) == {1, 2}


def test_partition_errors():
    with pytest.raises(PartitionError):
        folds_for(toy_table(rounds=3), "leave_two_rounds_out")
    with pytest.raises(PartitionError):
        folds_for(toy_table(n_subjects=1), "loso")
    with pytest.raises(PartitionError):
        folds_for(toy_table(), "kfold")


def test_cross_validate_report():
    rep = cross_validate(toy_table(), "loso", {"n_trees": 10})
    assert len(rep.folds) == 3
    assert 0 <= rep.mean_accuracy <= 1
    assert set(rep.per_subject()) == {"S01", "S02", "S03"}
    assert '"strategy": "loso"' in rep.to_json()


def test_adaptation_split_takes_earliest():
    t = toy_table(per_round=30)
    a, e = adaptation_split(t, 0.1)
    assert len(a) == 3 * 4 * 3
    for key in {(s, r) for s, r in zip(t.subject_id, t.round_index)}:
        sel = (t.subject_id == key[0]) & (t.round_index == key[1])
        mine = np.intersect1d(a, np.flatnonzero(sel))
        assert sorted(t.window_start_s[mine].tolist()) == pytest.approx([0.0, 0.1, 0.2])


def test_adaptation_split_errors():
    t = toy_table(per_round=5)
    with pytest.raises(AdaptError):
        adaptation_split(t, 0.1)
    with pytest.raises(AdaptError):
        adaptation_split(t, 1.5)


def test_fraction_zero_reproduces_base():
    t = toy_table()
    others = t.subset(np.flatnonzero(t.subject_id != "S03"))
    new = t.subset(np.flatnonzero(t.subject_id == "S03"))
    base = train(others, {"n_trees": 10})
    adapted = adapt_model(base, others, new, 0.0)
    assert np.array_equal(adapted.predict_proba(t.X), base.predict_proba(t.X))
