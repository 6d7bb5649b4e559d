"""Whole-study analyses: detection accuracy, cross-subject transfer, SSC effects, trends."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .features import FeatureTable, build_dataset
from .learn.analysis import class_separation, feature_importance, pca_project, trend_from_means
from .learn.gbdt import train
from .learn.validation import cross_validate, evaluate_adaptation
from .pipeline import PreprocessConfig, preprocess_session
from .session import SCENARIOS

log = logging.getLogger(__name__)

LEG_MUSCLES = ("rf", "bf")


@dataclass
class StudyTables:
    """Feature tables of one synthetic study plus the subjects' suit sides."""
    suit: FeatureTable
    rollator: FeatureTable
    movement: FeatureTable | None
    suit_side: dict = field(default_factory=dict)


def build_study_tables(sessions, suit_side: dict, cfg: PreprocessConfig | None = None) -> StudyTables:
    """Preprocess and featurize sessions one at a time (keeps memory flat)."""
    cfg = cfg or PreprocessConfig()
    emg_parts, mov_parts = [], []
    for s in sessions:
        p = preprocess_session(s, cfg)
        emg_parts.append(build_dataset([p], "suit"))
        if s.scenario.rollator:
            mov_parts.append(build_dataset([p], "movement"))
    suit = FeatureTable.concat(emg_parts)
    rollator = suit.subset(np.arange(len(suit)))
    rollator.y = np.array([SCENARIOS[int(k)][0] for k in suit.scenario])
    rollator.task = "rollator"
    movement = FeatureTable.concat(mov_parts) if mov_parts else None
    return StudyTables(suit, rollator, movement, dict(suit_side))


def synthetic_study_tables(n_subjects: int = 11, rounds: int = 10, master_seed: int = 0,
                           drift_per_round: float = 0.0, scenarios=(1, 2, 3, 4), cfg=None, **overrides):
    subjects = synth.study_subjects(n_subjects, master_seed, drift_per_round, **overrides)
    sides = {sid: p.suit_side for sid, p in subjects}
    sessions = synth.iter_study(n_subjects, rounds, master_seed, drift_per_round, scenarios, **overrides)
    return build_study_tables(sessions, sides, cfg)


def restricted_leg_columns(table: FeatureTable, side: str, feature: str) -> list:
    return [table.feature_names.index(f"emg_{m}_{side[0]}.{feature}") for m in LEG_MUSCLES]


def restricted_leg_means(table: FeatureTable, subject_id: str, side: str, feature: str, scenarios) -> dict:
    """Per-round mean of ``feature`` over the restricted-side leg channels."""
    cols = restricted_leg_columns(table, side, feature)
    mine = (table.subject_id == subject_id) & np.isin(table.scenario, scenarios)
    out = {}
    for r in sorted(set(table.round_index[mine].tolist())):
        sel = mine & (table.round_index == r)
        out[r] = float(table.X[np.ix_(sel, cols)].mean())
    return out


def suit_ssc_effect(tables: StudyTables) -> dict:
    """Mean restricted-leg SSC with and without the suit, per subject."""
    out = {}
    for sid, side in sorted(tables.suit_side.items()):
        cols = restricted_leg_columns(tables.suit, side, "ssc")
        mine = tables.suit.subject_id == sid
        with_suit = mine & tables.suit.y.astype(bool)
        without = mine & ~tables.suit.y.astype(bool)
        a = float(tables.suit.X[np.ix_(with_suit, cols)].mean())
        b = float(tables.suit.X[np.ix_(without, cols)].mean())
        out[sid] = {"suit": a, "no_suit": b, "higher_with_suit": bool(a > b)}
    return out


def round_trends(tables: StudyTables, feature: str = "ssc", scenarios=(2, 4)) -> dict:
    """Trend over rounds of the restricted-leg ``feature`` in suit scenarios, per subject."""
    out = {}
    for sid, side in sorted(tables.suit_side.items()):
        means = restricted_leg_means(tables.suit, sid, side, feature, scenarios)
        out[sid] = trend_from_means(list(means), list(means.values()))
    return out


def intra_subject(table: FeatureTable, hp=None) -> dict:
    rep = cross_validate(table, "leave_two_rounds_out", hp)
    return {"mean_accuracy": rep.mean_accuracy, "per_subject": rep.per_subject()}


def cross_subject(table: FeatureTable, fraction: float = 0.1, hp=None) -> dict:
    """LOSO zero-shot and adapted accuracy per held-out subject."""
    per = {}
    for sid in sorted(set(table.subject_id.tolist())):
        r = evaluate_adaptation(table, sid, fraction, hp)
        per[sid] = {"loso": r.loso_accuracy, "zero_shot": r.zero_shot_accuracy, "adapted": r.adapted_accuracy,
                    "n_adapt": r.n_adapt, "n_eval": r.n_eval}
    return {
        "loso_mean_accuracy": float(np.mean([v["loso"] for v in per.values()])),
        "zero_shot_mean_accuracy": float(np.mean([v["zero_shot"] for v in per.values()])),
        "adapted_mean_accuracy": float(np.mean([v["adapted"] for v in per.values()])),
        "per_subject": per,
    }


def movement_structure(table: FeatureTable, hp=None, top: int = 10) -> dict:
    model = train(table, hp)
    ranked = feature_importance(model)[:top]
    coords = pca_project(table, 2)
    return {
        "top_features": [[n, v] for n, v in ranked],
        "gyro_in_top": sum("_gyro" in n for n, _ in ranked),
        "pca_class_separation": class_separation(coords, table.y),
    }


def full_report(n_subjects: int = 11, rounds: int = 10, master_seed: int = 0, drift_per_round: float = 0.0,
                hp=None, cross_subject_analysis: bool = True) -> dict:
    tables = synthetic_study_tables(n_subjects, rounds, master_seed, drift_per_round)
    rep = {
        "study": {"subjects": n_subjects, "rounds": rounds, "master_seed": master_seed,
                  "drift_per_round": drift_per_round},
        "suit_detection": intra_subject(tables.suit, hp),
        "rollator_detection": intra_subject(tables.rollator, hp),
        "movement_intra": intra_subject(tables.movement, hp),
        "suit_ssc": suit_ssc_effect(tables),
        "ssc_trends": {k: t.to_dict() for k, t in round_trends(tables, "ssc").items()},
        "rms_trends": {k: t.to_dict() for k, t in round_trends(tables, "rms").items()},
        "movement_structure": movement_structure(tables.movement, hp),
    }
    if cross_subject_analysis:
        rep["movement_cross_subject"] = cross_subject(tables.movement, 0.1, hp)
    return rep
