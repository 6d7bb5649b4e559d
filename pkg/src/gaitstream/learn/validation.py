"""Cross-validation harnesses and new-subject adaptation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import AdaptError, PartitionError
from ..features import FeatureTable
from .gbdt import GBDTClassifier, train

STRATEGIES = ("loso", "leave_two_rounds_out")


@dataclass
class Fold:
    held_out: tuple
    accuracy: float
    n_test: int
    test_index: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"held_out": list(self.held_out), "accuracy": self.accuracy, "n_test": self.n_test}


@dataclass
class CVReport:
    strategy: str
    task: str
    folds: list

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    def per_subject(self) -> dict:
        out: dict = {}
        for f in self.folds:
            out.setdefault(f.held_out[0], []).append(f.accuracy)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "task": self.task,
            "mean_accuracy": self.mean_accuracy,
            "per_subject": self.per_subject(),
            "folds": [f.to_dict() for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _normalise_strategy(strategy: str) -> str:
    s = strategy.replace("-", "_")
    if s not in STRATEGIES:
        raise PartitionError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return s


def folds_for(table: FeatureTable, strategy: str) -> list:
    """[(held_out_ids, train_index, test_index), ...] for ``strategy``."""
    strategy = _normalise_strategy(strategy)
    subjects = sorted(set(table.subject_id.tolist()))
    out = []
    if strategy == "loso":
        if len(subjects) < 2:
            raise PartitionError("leave-one-subject-out needs at least 2 subjects")
        for s in subjects:
            test = table.subject_id == s
            out.append(((s,), np.flatnonzero(~test), np.flatnonzero(test)))
        return out
    for s in subjects:
        mine = table.subject_id == s
        rounds = sorted(set(table.round_index[mine].tolist()))
        if len(rounds) < 4 or len(rounds) % 2:
            raise PartitionError(
                f"leave-two-rounds-out needs an even number (>= 4) of rounds; subject {s} has {len(rounds)}"
            )
        for i in range(0, len(rounds), 2):
            pair = rounds[i:i + 2]
            test = mine & np.isin(table.round_index, pair)
            train_ = mine & ~test
            out.append(((s, *pair), np.flatnonzero(train_), np.flatnonzero(test)))
    return out


def cross_validate(table: FeatureTable, strategy: str, hp: dict | None = None) -> CVReport:
    """Window-level accuracy per fold.

    ``loso`` holds out each subject in turn and trains on the rest;
    ``leave_two_rounds_out`` trains per subject on all but one consecutive
    round pair.
    """
    strategy = _normalise_strategy(strategy)
    folds = []
    for held, tr, te in folds_for(table, strategy):
        model = train(table.subset(tr), hp)
        pred = model.predict(table.X[te])
        acc = float(np.mean(pred == table.y[te]))
        folds.append(Fold(tuple(held), acc, len(te), te))
    return CVReport(strategy, table.task, folds)


# ---------------------------------------------------------------------------
# adaptation


def adaptation_split(table: FeatureTable, fraction: float = 0.1):
    """Earliest ``fraction`` of windows of each session -> (adapt_index, eval_index)."""
    if not 0.0 <= fraction <= 1.0:
        raise AdaptError(f"fraction must be in [0, 1], got {fraction}")
    adapt, evaluate = [], []
    keys = np.rec.fromarrays([table.subject_id, table.scenario, table.round_index])
    for key in sorted(set(keys.tolist())):
        idx = np.flatnonzero(keys == np.array(key, dtype=keys.dtype))
        idx = idx[np.argsort(table.window_start_s[idx], kind="stable")]
        k = int(math.floor(fraction * len(idx) + 1e-9))
        if fraction > 0 and k == 0:
            raise AdaptError(f"session {key} has only {len(idx)} windows; cannot take {fraction:.0%} of it")
        adapt.append(idx[:k])
        evaluate.append(idx[k:])
    return np.sort(np.concatenate(adapt)), np.sort(np.concatenate(evaluate))


def adapt_model(base: GBDTClassifier, base_table: FeatureTable, new_subject_table: FeatureTable,
                fraction: float = 0.1, seed: int | None = None) -> GBDTClassifier:
    """Retrain from scratch on ``base_table`` plus the new subject's earliest windows.

    Evaluate the result on ``adaptation_split(new_subject_table, fraction)[1]`` only.
    """
    adapt_idx, _ = adaptation_split(new_subject_table, fraction)
    pooled = FeatureTable.concat([base_table, new_subject_table.subset(adapt_idx)])
    hp = base.get_params()
    if seed is not None:
        hp["seed"] = seed
    return train(pooled, hp)


@dataclass
class AdaptationResult:
    subject_id: str
    zero_shot_accuracy: float
    adapted_accuracy: float
    n_adapt: int
    n_eval: int
    # the zero-shot model on all of the subject's windows (its LOSO fold)
    loso_accuracy: float = float("nan")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_adaptation(table: FeatureTable, subject_id: str, fraction: float = 0.1,
                        hp: dict | None = None) -> AdaptationResult:
    """Zero-shot vs adapted accuracy on the held-out subject's unused windows."""
    others = table.subset(np.flatnonzero(table.subject_id != subject_id))
    new = table.subset(np.flatnonzero(table.subject_id == subject_id))
    base = train(others, hp)
    adapt_idx, eval_idx = adaptation_split(new, fraction)
    adapted = adapt_model(base, others, new, fraction)
    Xe, ye = new.X[eval_idx], new.y[eval_idx]
    return AdaptationResult(
        str(subject_id),
        float(np.mean(base.predict(Xe) == ye)),
        float(np.mean(adapted.predict(Xe) == ye)),
        len(adapt_idx),
        len(eval_idx),
        float(np.mean(base.predict(new.X) == new.y)),
    )
