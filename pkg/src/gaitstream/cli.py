"""Command-line entry point: ``gaitstream <command> [flags]``.

Every artifact carries a provenance header with the tool version, the
command and its fully resolved flags, so it can be regenerated from its
inputs. Relative paths resolve against ``--workdir``; ``GAITSTREAM_SEED``
replaces the default seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import socket
import sys
from pathlib import Path

import numpy as np

from . import __version__, report, stream, synth
from .errors import GaitstreamError
from .features import TASKS, FeatureTable, build_dataset, segment_intensity
from .learn import analysis, gbdt, validation
from .pipeline import PreprocessConfig, preprocess_session
from .session import load_session, save_session
from .synth import session_dirname

log = logging.getLogger("gaitstream")

SEED_ENV = "GAITSTREAM_SEED"


class UsageError(Exception):
    """Flag combination that argparse cannot reject on its own (exit 2)."""


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def provenance(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "workdir", "verbose")}
    return {"tool": "gaitstream", "version": __version__, "command": args.command, "config": cfg}


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _write_json(path: Path, payload: dict, args) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"provenance": provenance(args), **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _header_lines(args) -> list:
    return [json.dumps(provenance(args), sort_keys=True)]


def _write_csv(path: Path, header: list, rows, args) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in _header_lines(args):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])
    path.write_text(buf.getvalue())


def _session_dirs(root: Path) -> list:
    if not root.is_dir():
        raise GaitstreamError(f"{root}: not a directory")
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise GaitstreamError(f"{root}: contains no session directories (manifest.json)")
    return dirs


def _iter_sessions(root: Path):
    for d in _session_dirs(root):
        yield load_session(d)


def _hp(args) -> dict:
    return {"n_trees": args.n_trees, "max_depth": args.max_depth, "learning_rate": args.learning_rate,
            "min_samples_leaf": args.min_samples_leaf, "seed": args.seed}


def _read_features(args, path) -> FeatureTable:
    p = _path(args, path)
    if not p.is_file():
        raise GaitstreamError(f"{p}: feature table not found")
    return FeatureTable.from_csv(p)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    out = _path(args, args.out)
    scen = tuple(args.scenarios)
    sessions = synth.iter_study(args.subjects, args.rounds, args.seed, args.drift, scen)
    paths = synth.write_study(sessions, out, provenance(args))
    subjects = [
        {"subject_id": sid, "seed": p.seed, "suit_side": p.suit_side, "yaw_rate_dps": p.yaw_rate_dps,
         "sway_dps": p.sway_dps}
        for sid, p in synth.study_subjects(args.subjects, args.seed, args.drift)
    ]
    _write_json(out / "study.json", {"subjects": subjects, "sessions": [p.name for p in paths]}, args)
    print(f"wrote {len(paths)} sessions to {out}")
    return 0


def cmd_preprocess(args) -> int:
    src, out = _path(args, args.input), _path(args, args.out)
    cfg = PreprocessConfig.causal() if args.filter_mode == "causal" else PreprocessConfig()
    n = 0
    for s in _iter_sessions(src):
        save_session(preprocess_session(s, cfg), out / session_dirname(s), provenance(args))
        n += 1
    print(f"preprocessed {n} sessions into {out}")
    return 0


def cmd_featurize(args) -> int:
    src, out = _path(args, args.input), _path(args, args.out)
    sessions = [s for s in _iter_sessions(src) if args.task != "movement" or s.scenario.rollator]
    if not sessions:
        raise GaitstreamError(f"{src}: no sessions usable for task {args.task!r}")
    tables = [build_dataset([s], args.task, args.modalities) for s in sessions]
    table = FeatureTable.concat(tables)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, _header_lines(args))
    print(f"{len(table)} windows x {len(table.feature_names)} features -> {out}")
    return 0


def cmd_train(args) -> int:
    table = _read_features(args, args.features)
    model = gbdt.train(table, _hp(args))
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gbdt.save_model(model, out, provenance(args))
    print(f"trained {len(model.trees_)} trees on {len(table)} windows -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    table = _read_features(args, args.features)
    table.task = args.task
    rep = validation.cross_validate(table, args.strategy, _hp(args))
    _write_json(_path(args, args.out), rep.to_dict(), args)
    print(f"{rep.strategy}: mean accuracy {rep.mean_accuracy:.4f} over {len(rep.folds)} folds")
    return 0


def cmd_adapt(args) -> int:
    table = _read_features(args, args.features)
    subjects = [args.subject] if args.subject else sorted(set(table.subject_id.tolist()))
    res = [validation.evaluate_adaptation(table, s, args.fraction, _hp(args)).to_dict() for s in subjects]
    _write_json(_path(args, args.out), {"fraction": args.fraction, "results": res}, args)
    for r in res:
        print(f"{r['subject_id']}: zero-shot {r['zero_shot_accuracy']:.4f} -> adapted {r['adapted_accuracy']:.4f}")
    return 0


def cmd_trend(args) -> int:
    table = _read_features(args, args.features)
    sel = (table.subject_id == args.subject) & (table.scenario == args.scenario)
    if not sel.any():
        raise GaitstreamError(f"no windows for subject {args.subject} in scenario {args.scenario}")
    if args.feature not in table.feature_names:
        raise GaitstreamError(f"feature {args.feature!r} not in table")
    tr = analysis.trend_over_rounds(table.subset(np.flatnonzero(sel)), args.feature)
    _write_json(_path(args, args.out), {"subject_id": args.subject, "scenario": args.scenario,
                                        "feature": args.feature, "trend": tr.to_dict()}, args)
    print(f"slope {tr.slope:.6g} per round, r = {tr.correlation:.3f}")
    return 0


def _policy(args) -> stream.AlertPolicy:
    return stream.AlertPolicy(args.k_consecutive, args.min_confidence, args.proximity_threshold)


def cmd_stream(args) -> int:
    cfg = PreprocessConfig.causal()

    def loader(p):
        return gbdt.load_model(_path(args, p))

    alerts = open(_path(args, args.alerts), "w") if args.alerts else sys.stdout
    preds = open(_path(args, args.predictions), "w") if args.predictions else None
    try:
        if args.listen:
            host, port = _host_port(args.listen)
            server = stream.make_tcp_server(host, port, alerts, cfg, lambda: _policy(args))
            print(f"listening on {host}:{server.server_address[1]}", file=sys.stderr)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
            finally:
                server.server_close()
        else:
            state = stream.serve_lines(sys.stdin, alerts, loader, cfg, _policy(args), preds)
            print(f"{len(state.predictions)} predictions, {state.rejected} rejected frames", file=sys.stderr)
    finally:
        if alerts is not sys.stdout:
            alerts.close()
        if preds is not None:
            preds.close()
    return 0


def _host_port(s: str):
    host, _, port = s.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError(f"expected HOST:PORT, got {s!r}") from None


def cmd_replay(args) -> int:
    s = load_session(_path(args, args.session))
    model = str(_path(args, args.model)) if args.model else None
    prox = (lambda t: args.proximity) if args.proximity is not None else None
    if args.connect:
        host, port = _host_port(args.connect)
        with socket.create_connection((host, port)) as sock:
            f = sock.makefile("w", encoding="utf-8")
            n = stream.replay(s, f, args.chunk, args.speed, model, prox)
            sock.shutdown(socket.SHUT_WR)
            for line in sock.makefile("r", encoding="utf-8"):
                sys.stdout.write(line)
    else:
        n = stream.replay(s, sys.stdout, args.chunk, args.speed, model, prox)
    print(f"replayed {n} frames", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    hp = _hp(args)
    if args.sessions:
        src = _path(args, args.sessions)
        dirs = _session_dirs(src)
        sides = {}
        for d in dirs:
            m = json.loads((d / "manifest.json").read_text())
            sides[m["subject_id"]] = m["suit_side"]
        tables = report.build_study_tables((load_session(d) for d in dirs), sides)
        first = load_session(dirs[0])
    else:
        tables = report.synthetic_study_tables(args.subjects, args.rounds, args.seed, args.drift)
        sid, p = synth.study_subjects(args.subjects, args.seed, args.drift)[0]
        first = synth.generate_session(p, synth.ScenarioTag(True, True), 1, synth.round_plan(p, 1), sid)
    if tables.movement is None:
        raise GaitstreamError("report needs rollator scenarios for the movement analyses")

    summary = {
        "suit_detection": report.intra_subject(tables.suit, hp),
        "rollator_detection": report.intra_subject(tables.rollator, hp),
        "movement_intra": report.intra_subject(tables.movement, hp),
        "suit_ssc": report.suit_ssc_effect(tables),
    }
    trends = {f: report.round_trends(tables, f) for f in ("ssc", "rms")}
    summary["trends"] = {f: {k: t.to_dict() for k, t in tr.items()} for f, tr in trends.items()}
    model = gbdt.train(tables.movement, hp)
    ranked = analysis.feature_importance(model)
    summary["movement_top_features"] = [[n, v] for n, v in ranked[:10]]
    proj = analysis.PCAProjector(2).fit(tables.movement.X)
    coords = proj.transform(tables.movement.X)
    summary["pca"] = {"explained_variance_ratio": proj.explained_variance_ratio_.tolist(),
                      "class_separation": analysis.class_separation(coords, tables.movement.y)}
    if args.cross_subject:
        summary["movement_cross_subject"] = report.cross_subject(tables.movement, 0.1, hp)
    _write_json(out / "summary.json", summary, args)

    # plot data
    _write_csv(out / "importance.csv", ["feature", "importance"], ranked, args)
    mv = tables.movement
    _write_csv(out / "pca.csv", ["pc1", "pc2", "label", "subject_id"],
               ((float(a), float(b), y, s) for (a, b), y, s in zip(coords, mv.y, mv.subject_id)), args)
    _write_csv(out / "ssc.csv", ["subject_id", "ssc_suit", "ssc_no_suit"],
               ((k, v["suit"], v["no_suit"]) for k, v in summary["suit_ssc"].items()), args)
    rows = []
    for f, tr in trends.items():
        for sid, t in tr.items():
            rows += [(f, sid, int(r), float(m)) for r, m in zip(t.rounds, t.means)]
    _write_csv(out / "trends.csv", ["feature", "subject_id", "round", "mean"], rows, args)
    inten = segment_intensity(preprocess_session(first))
    k = min(len(v) for v in inten.values())
    _write_csv(out / "intensity.csv", ["window"] + list(inten),
               ([i] + [float(inten[p][i]) for p in inten] for i in range(k)), args)
    print(_text_summary(summary))
    return 0


def _text_summary(s: dict) -> str:
    lines = [
        f"suit detection (leave-two-rounds-out):     {s['suit_detection']['mean_accuracy']:.4f}",
        f"rollator detection (leave-two-rounds-out): {s['rollator_detection']['mean_accuracy']:.4f}",
        f"movement (leave-two-rounds-out):           {s['movement_intra']['mean_accuracy']:.4f}",
    ]
    if "movement_cross_subject" in s:
        cs = s["movement_cross_subject"]
        lines.append(f"movement LOSO / zero-shot / adapted:       {cs['loso_mean_accuracy']:.4f} / "
                     f"{cs['zero_shot_mean_accuracy']:.4f} / {cs['adapted_mean_accuracy']:.4f}")
    higher = sum(v["higher_with_suit"] for v in s["suit_ssc"].values())
    lines.append(f"restricted-leg SSC higher with suit:       {higher}/{len(s['suit_ssc'])} subjects")
    lines.append("top movement features: " + ", ".join(n for n, _ in s["movement_top_features"][:5]))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parser


def _add_hp(p, seed) -> None:
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--seed", type=int, default=seed)


def _add_policy(p) -> None:
    p.add_argument("--k-consecutive", type=int, default=5)
    p.add_argument("--min-confidence", type=float, default=0.7)
    p.add_argument("--proximity-threshold", type=float, default=1.0)


def build_parser(seed: int) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gaitstream", description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default=".", help="base directory for relative paths")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"gaitstream {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic study")
    p.add_argument("--subjects", type=int, default=11)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--drift", type=float, default=0.0, help="EMG amplitude drift per round (fraction)")
    p.add_argument("--scenarios", type=int, nargs="+", default=[1, 2, 3, 4], choices=[1, 2, 3, 4])
    p.add_argument("--out", default="study")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="interpolate gaps, remove IMU spikes, filter EMG")
    p.add_argument("--input", default="study")
    p.add_argument("--out", default="preprocessed")
    p.add_argument("--filter-mode", choices=["zero_phase", "causal"], default="zero_phase")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", help="windowed features for one task")
    p.add_argument("--input", default="preprocessed")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--modalities", choices=["emg", "imu", "fused"], default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit the gradient-boosted classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", default="model.json")
    _add_hp(p, seed)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validate")
    p.add_argument("--features", required=True)
    p.add_argument("--task", choices=TASKS, default="")
    p.add_argument("--strategy", choices=["loso", "leave-two-rounds-out", "leave_two_rounds_out"],
                   default="leave-two-rounds-out")
    p.add_argument("--out", default="cv.json")
    _add_hp(p, seed)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("adapt", help="zero-shot vs adapted accuracy on held-out subjects")
    p.add_argument("--features", required=True)
    p.add_argument("--subject", default=None, help="default: every subject in turn")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--out", default="adapt.json")
    _add_hp(p, seed)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("trend", help="per-round trend of one feature")
    p.add_argument("--features", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--scenario", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--out", default="trend.json")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("stream", help="run the real-time service (stdin or TCP)")
    p.add_argument("--listen", default=None, metavar="HOST:PORT", help="serve TCP instead of reading stdin")
    p.add_argument("--alerts", default=None, help="alert sink file (default stdout)")
    p.add_argument("--predictions", default=None, help="optional per-window prediction log")
    _add_policy(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("replay", help="stream a stored session over the wire protocol")
    p.add_argument("--session", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--chunk", type=int, default=256, help="samples per frame")
    p.add_argument("--speed", type=float, default=0.0, help="1 = real time, 0 = as fast as possible")
    p.add_argument("--proximity", type=float, default=None, help="constant obstacle distance in metres")
    p.add_argument("--connect", default=None, metavar="HOST:PORT", help="send to a TCP service instead of stdout")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="full-study analyses with plot data")
    p.add_argument("--sessions", default=None, help="session tree; default: generate the synthetic study")
    p.add_argument("--subjects", type=int, default=11)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--out", default="report")
    p.add_argument("--no-cross-subject", dest="cross_subject", action="store_false",
                   help="skip the (slow) leave-one-subject-out and adaptation analysis")
    _add_hp(p, seed)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        seed = default_seed()
    except UsageError as e:
        print(f"gaitstream: {e}", file=sys.stderr)
        return 2
    parser = build_parser(seed)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "featurize" and args.out is None:
        args.out = f"features_{args.task}.csv"
    if getattr(args, "chunk", 1) < 1:
        parser.print_usage(sys.stderr)
        print("gaitstream: --chunk must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gaitstream: {e}", file=sys.stderr)
        return 2
    except (GaitstreamError, ValueError, OSError) as e:
        print(f"gaitstream: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
