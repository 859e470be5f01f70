"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error. Every output file is
written atomically and carries the tool version and config hash.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .equalizer import EqualizerProfile, compute_equalizer, mean_cycle
from .exceptions import EarCardioError
from .fiducial import EVENTS, label_cycles, read_fiducials_csv, timing_error, write_fiducials_csv
from .io import (
    atomic_write_text,
    build_session,
    dumps_json,
    load_session,
    provenance,
    read_imu_csv,
    read_waveform_csv,
    read_wav,
    save_session,
    write_waveform_csv,
)
from .metrics import error_percentiles, pearson
from .motion import (
    MotionClassifier,
    evaluate_cv,
    feature_matrix,
    pca_projection,
    train_motion_classifier,
)
from .pipeline import PipelineConfig, as_cycle_objects, gate_session, session_cycles
from .reconstructor import calibrate, load_checkpoint, predict, save_checkpoint, train
from .reconstructor.training import equalize_inputs
from .segmentation import AnchorKind, load_cycles, save_cycles
from .signal import Modality
from .synth import SynthConfig, motion_corpus, write_synth_session

CHUNK = 64  # fixed inference chunk, so --jobs never changes batch composition


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _pipeline_config(args):
    overrides = _parse_set(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides["train.seed"] = args.seed
    return PipelineConfig.load(getattr(args, "config", None), overrides)


def _parallel_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _predict_chunked(model, X, jobs):
    chunks = [X[i:i + CHUNK] for i in range(0, X.shape[0], CHUNK)]
    parts = _parallel_map(lambda c: predict(model, c), chunks, jobs)
    return np.concatenate(parts) if parts else np.zeros((0, model.config.input_len))


def _cycles_matrix(directory, name):
    cycles, meta = load_cycles(directory, name)
    X = np.array([c.samples for c in cycles]).reshape(-1, 400)
    return X, cycles, meta


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    for k, v in _parse_set(args.set).items():
        d[k] = v
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = SynthConfig.from_dict(d).validate()
    write_synth_session(cfg, args.out)
    return 0


def cmd_ingest(args):
    cfg = _pipeline_config(args)
    ears = read_wav(args.ear)
    axis_map = json.loads(args.axis_map) if args.axis_map else cfg.axis_map
    scg, gcg = read_imu_csv(args.imu, axis_map)
    session = build_session(ears, scg, gcg, args.offset_ms, {"source": str(args.ear)})
    save_session(session, args.out, config=cfg.to_dict())
    return 0


def cmd_gate(args):
    cfg = _pipeline_config(args)
    if args.train_synth:
        windows, labels, _ = motion_corpus(seed=cfg.seed)
        X = feature_matrix(windows, cfg.mfcc)
        clf = train_motion_classifier(X, labels, seed=cfg.seed, mfcc_config=cfg.mfcc)
        clf.save(args.model, config=cfg.to_dict())
        out = Path(args.out) if args.out else None
        if out is not None:
            cv = evaluate_cv(X, labels, k=5, seed=cfg.seed)
            report = {"cv": cv.to_dict(), "n_windows": int(len(labels)),
                      "provenance": provenance(cfg.to_dict())}
            atomic_write_text(out / "gate_cv.json", dumps_json(report))
            pcs = pca_projection(X)
            lines = ["pc1,pc2,label"] + [
                f"{a!r},{b!r},{int(y)}" for (a, b), y in zip(pcs.tolist(), labels)
            ]
            atomic_write_text(out / "gate_pca.csv", "\n".join(lines) + "\n")
        return 0
    if not args.session or not args.out:
        raise UsageError("gate needs --session and --out (or --train-synth)")
    clf = MotionClassifier.load(args.model)
    session = load_session(args.session)
    threshold = cfg.gate_threshold_p if args.threshold is None else args.threshold
    subs, report = gate_session(session, clf, threshold)
    out = Path(args.out)
    for i, sub in enumerate(subs):
        save_session(sub, out / f"run_{i:03d}", config=cfg.to_dict())
    d = report.to_dict()
    d["provenance"] = provenance(cfg.to_dict())
    atomic_write_text(out / "gate.json", dumps_json(d))
    return 0


def _segment_one(session_dir, out_dir, modality, cfg):
    session = load_session(session_dir)
    cs = session_cycles(session, modality, cfg)
    extra = {"channel": cs.channel, "session": str(session_dir)}
    conf = cfg.to_dict()
    save_cycles(as_cycle_objects(cs.ear, cs.ear_anchors, AnchorKind.S1, Modality.EAR),
                out_dir, "ear", cs.snr_db, extra, conf)
    save_cycles(as_cycle_objects(cs.target, cs.target_anchors, AnchorKind.AO, modality),
                out_dir, "target", None, extra, conf)
    return len(cs)


def cmd_segment(args):
    cfg = _pipeline_config(args)
    sessions = args.session
    outs = [Path(args.out)] if len(sessions) == 1 else [
        Path(args.out) / Path(s).name for s in sessions
    ]
    _parallel_map(lambda so: _segment_one(so[0], so[1], args.modality, cfg),
                  list(zip(sessions, outs)), args.jobs)
    return 0


def cmd_label(args):
    X = _cycles_matrix(args.cycles, args.name)[0]
    chunks = [X[i:i + CHUNK] for i in range(0, X.shape[0], CHUNK)]
    parts = _parallel_map(lambda c: label_cycles(c)[0], chunks, args.jobs)
    sets = [s for p in parts for s in p]
    write_fiducials_csv(args.out, sets)
    return 0


def _load_pairs(dirs):
    ear, tgt = [], []
    for d in dirs:
        ear.append(_cycles_matrix(d, "ear")[0])
        tgt.append(_cycles_matrix(d, "target")[0])
    return np.concatenate(ear), np.concatenate(tgt)


def cmd_train(args):
    cfg = _pipeline_config(args)
    X, Y = _load_pairs(args.cycles)
    mcfg = cfg.model
    if args.modality:
        mcfg = replace(mcfg, target_modality=args.modality)
    tcfg = cfg.train
    if args.epochs is not None:
        tcfg = replace(tcfg, max_epochs=args.epochs)
    model, history = train(mcfg, tcfg, (X, Y))
    save_checkpoint(model, args.out, config=cfg.to_dict())
    if args.history:
        atomic_write_text(args.history, dumps_json(
            {"loss": history, "provenance": provenance(cfg.to_dict())}))
    return 0


def cmd_calibrate(args):
    cfg = _pipeline_config(args)
    base = load_checkpoint(args.model)
    X, Y = _load_pairs([args.cycles])
    n = cfg.calibration_cycles if args.n is None else args.n
    model = calibrate(base, (X[:n], Y[:n]) if n > 0 else [], cfg.calibration)
    save_checkpoint(model, args.out, config=cfg.to_dict())
    return 0


def cmd_equalize(args):
    cfg = _pipeline_config(args)
    n = cfg.equalizer_cycles
    ref = mean_cycle(_cycles_matrix(args.ref, "ear")[0], n)
    tgt = mean_cycle(_cycles_matrix(args.tgt, "ear")[0], n)
    prof = compute_equalizer(ref, tgt, ref_device_id=args.ref_id, tgt_device_id=args.tgt_id)
    prof.save(args.out, config=cfg.to_dict())
    return 0


def cmd_reconstruct(args):
    cfg = _pipeline_config(args)
    model = load_checkpoint(args.model)
    X, cycles, _ = _cycles_matrix(args.cycles, "ear")
    profile = EqualizerProfile.load(args.profile) if args.profile else None
    Xin = equalize_inputs(X, profile) if len(X) else X
    R = _predict_chunked(model, Xin, args.jobs)
    out = Path(args.out)
    anchors = [c.anchor_index_global for c in cycles]
    save_cycles(as_cycle_objects(R, anchors, AnchorKind.S1, model.config.target_modality),
                out, "recon", None, {"model": str(args.model)}, cfg.to_dict())
    write_waveform_csv(out / "recon.csv", R)
    return 0


def _eval_waveforms(pred_path, truth_path):
    pid, P = read_waveform_csv(pred_path)
    tid, T = read_waveform_csv(truth_path)
    tmap = dict(zip(tid, T))
    common = [i for i in pid if i in tmap]
    pmap = dict(zip(pid, P))
    rs = [pearson(pmap[i], tmap[i]) for i in common]
    ps, _ = label_cycles([pmap[i] for i in common])
    ts, _ = label_cycles([tmap[i] for i in common])
    return rs, [(a, b) for a, b in zip(ps, ts) if a is not None and b is not None]


def _eval_fiducials(pred_path, truth_path):
    P = read_fiducials_csv(pred_path)
    T = read_fiducials_csv(truth_path)
    return [(P[k], T[k]) for k in P if k in T]


def cmd_eval(args):
    with open(args.pred) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] == ["cycle_id", "v0"]:
        rs, fpairs = _eval_waveforms(args.pred, args.truth)
    else:
        rs, fpairs = [], _eval_fiducials(args.pred, args.truth)
    report = {"n_cycles": len(rs) if rs else len(fpairs)}
    if rs:
        report["pearson"] = {"mean": float(np.mean(rs)), "std": float(np.std(rs)),
                             "median": float(np.median(rs))}
    else:
        report["pearson"] = None
    fid = {}
    if fpairs:
        errs = [timing_error(p, t) for p, t in fpairs]
        for e in EVENTS:
            fid[e] = error_percentiles([x[e] for x in errs]).to_dict()
    report["fiducial_error_ms"] = fid
    report["provenance"] = provenance({"pred": str(args.pred), "truth": str(args.truth)})
    text = dumps_json(report)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="earcardio", description="Cardiac waveform reconstruction from in-ear audio.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (dotted keys, JSON values)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, default=1)
        return sp

    sp = add("synth", cmd_synth, "render a synthetic paired session")
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, "align ear WAV and IMU CSV into a session")
    sp.add_argument("--ear", required=True)
    sp.add_argument("--imu", required=True)
    sp.add_argument("--offset-ms", type=float)
    sp.add_argument("--axis-map", help='JSON, e.g. {"scg": "az", "gcg": "gy"}')
    sp.add_argument("--out", required=True)

    sp = add("gate", cmd_gate, "train or apply the motion gate")
    sp.add_argument("--model", required=True, help="classifier JSON (read, or written with --train-synth)")
    sp.add_argument("--train-synth", action="store_true")
    sp.add_argument("--session")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--out")

    sp = add("segment", cmd_segment, "cut paired ear/target cycles")
    sp.add_argument("--session", required=True, nargs="+")
    sp.add_argument("--modality", default="SCG", choices=["SCG", "GCG"])
    sp.add_argument("--out", required=True)

    sp = add("label", cmd_label, "label fiducials on cycles")
    sp.add_argument("--cycles", required=True)
    sp.add_argument("--name", default="target")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a reconstruction model")
    sp.add_argument("--cycles", required=True, nargs="+")
    sp.add_argument("--modality", choices=["SCG", "GCG"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--history")
    sp.add_argument("--out", required=True)

    sp = add("calibrate", cmd_calibrate, "fine-tune a model on a few new-user cycles")
    sp.add_argument("--model", required=True)
    sp.add_argument("--cycles", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--out", required=True)

    sp = add("equalize", cmd_equalize, "derive a device equalizer profile")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--ref-id", default="ref")
    sp.add_argument("--tgt-id", default="tgt")
    sp.add_argument("--out", required=True)

    sp = add("reconstruct", cmd_reconstruct, "reconstruct target cycles from ear cycles")
    sp.add_argument("--model", required=True)
    sp.add_argument("--cycles", required=True)
    sp.add_argument("--profile")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "compare predictions with ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("earcardio: error: a subcommand is required")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (EarCardioError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"earcardio: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
