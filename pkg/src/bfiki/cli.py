"""Command-line entry point exposing every pipeline stage.

Exit codes: 0 success, 1 no result, 2 usage or config error, 3 data error.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import frames as fr
from . import inference, report, segmenter, series as series_mod, sra, synth
from .config import ENV_SEED, PipelineConfig, load_config
from .errors import BfikiError, ConfigInvalid
from .orchestrator import load_ip_database
from .pcap import read_pcap
from .pipeline import dump_report, run_attack

EXIT_OK = 0
EXIT_NO_RESULT = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BfikiError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bfiki",
        description="BFI keystroke-eavesdropping pipeline (offline)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="decode beamforming reports from a pcap")
    p.add_argument("--pcap", required=True)
    p.add_argument("--mac", required=True, help="victim MAC aa:bb:cc:dd:ee:ff")
    p.add_argument("--out", required=True, help="frames JSONL path")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("windows", help="detect attack windows from payment IPs")
    p.add_argument("--pcap", required=True)
    p.add_argument("--mac", required=True)
    p.add_argument("--ipdb", required=True, help="IP database text file")
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--pre-pad", type=float, default=0.0)
    p.add_argument("--out", required=True, help="windows JSON path")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("series", help="frames JSONL -> uniform series CSV")
    p.add_argument("--frames", required=True)
    p.add_argument("--selector", default=series_mod.DEFAULT_SELECTOR,
                   choices=series_mod.SELECTORS)
    p.add_argument("--fs", type=float, default=series_mod.DEFAULT_FS_HZ)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_series)

    p = sub.add_parser("recover", help="fill gaps of a sparse series")
    p.add_argument("--model", required=True, help="SRA checkpoint")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("segment", help="CFAR peaks and overlapping segments")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--k", type=int, required=True, help="password length K")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--take-last", action="store_true",
                   help="keep the last K peaks of a longer session")
    p.add_argument("--out", required=True, help="segments JSONL path")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train-sra", help="train the sparse-recovery autoencoder")
    p.add_argument("--data", required=True, help="dataset dir (labels.json)")
    p.add_argument("--config", default=None, help="pipeline TOML")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_sra)

    p = sub.add_parser("train-ki", help="train the keystroke-inference model")
    p.add_argument("--segments", required=True,
                   help="dataset dir (labels.json) or dir of segment JSONL")
    p.add_argument("--layout", default="numeric", choices=sorted(inference.LAYOUTS))
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    p.add_argument("--config", default=None, help="pipeline TOML")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_ki)

    p = sub.add_parser("infer", help="classify segments and rank passwords")
    p.add_argument("--model", required=True, help="KI checkpoint")
    p.add_argument("--segments", required=True, help="segments JSONL")
    p.add_argument("--topn", type=int, default=100)
    p.add_argument("--out", required=True, help="candidates JSON path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score candidate files against the truth")
    p.add_argument("--candidates", required=True, help="JSON file or directory")
    p.add_argument("--truth", required=True,
                   help="JSON: password string or {stem: password}")
    p.add_argument("--out", default=None, help="evaluation JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--layout", default="numeric", choices=sorted(inference.LAYOUTS))
    p.add_argument("--count", default="10x6",
                   help="comma list of COUNTxLENGTH, e.g. 500x6 or 10x4,10x6")
    p.add_argument("--ratio", type=float, default=1.0,
                   help="traffic ratio; 1.0 = saturated (no gaps)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("attack", help="full pipeline: pcap -> ranked passwords")
    p.add_argument("--pcap", required=True)
    p.add_argument("--mac", required=True)
    p.add_argument("--ipdb", required=True)
    p.add_argument("--sra", required=True, help="SRA checkpoint")
    p.add_argument("--ki", required=True, help="KI checkpoint")
    p.add_argument("--config", default=None, help="pipeline TOML")
    p.add_argument("--k", type=int, default=6, help="password length K")
    p.add_argument("--take-last", action="store_true")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("plot", help="render SVG + CSV for a stage output")
    p.add_argument("--kind", required=True, choices=report.PLOT_KINDS)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="output base path (no extension)")
    p.set_defaults(func=cmd_plot)

    return parser


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def cmd_parse(args) -> int:
    mac = fr.mac_parse(args.mac)
    n_frames = 0
    n_malformed = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in read_pcap(args.pcap):
            try:
                frame = fr.parse_action_noack(rec)
            except BfikiError:
                n_malformed += 1
                continue
            if frame is not None and frame.src_mac == mac:
                fh.write(json.dumps(fr.frame_to_dict(frame), sort_keys=True) + "\n")
                n_frames += 1
    print(f"wrote {n_frames} frames to {args.out} "
          f"({n_malformed} malformed reports skipped)")
    return EXIT_OK if n_frames else EXIT_NO_RESULT


def cmd_windows(args) -> int:
    from .orchestrator import VictimProfile, detect_windows, extract_ip_packets
    mac = fr.mac_parse(args.mac)
    db = load_ip_database(args.ipdb)
    profile = VictimProfile(mac=mac, ip_database=db, idle_timeout_s=args.timeout)
    records = read_pcap(args.pcap)
    windows = detect_windows(extract_ip_packets(records), profile,
                             pre_pad_s=args.pre_pad)
    payload = [{"start_us": w.start_us, "end_us": w.end_us,
                "trigger_ip": w.trigger_ip} for w in windows]
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"{len(windows)} attack window(s) -> {args.out}")
    return EXIT_OK if windows else EXIT_NO_RESULT


def cmd_series(args) -> int:
    frames = []
    with open(args.frames, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                frames.append(fr.frame_from_dict(json.loads(line)))
    out = series_mod.frames_to_series(frames, selector=args.selector,
                                      fs_hz=args.fs)
    series_mod.write_series_csv(args.out, out)
    print(f"{len(out)} samples ({int(out.gap_mask.sum())} gaps) -> {args.out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    model = sra.load_sra_checkpoint(args.model)
    sparse = series_mod.read_series_csv(args.in_path)
    dense = sra.recover(model, sparse)
    series_mod.write_series_csv(args.out, dense)
    print(f"recovered {int(sparse.gap_mask.sum())} gap samples -> {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    data = series_mod.read_series_csv(args.in_path)
    params = segmenter.SegmentationParams(alpha=args.alpha, beta=args.beta,
                                          k_keys=args.k)
    segments = segmenter.segment_pipeline(data, params, take_last=args.take_last)
    segmenter.write_segments_jsonl(args.out, segments)
    print(f"{len(segments)} segments -> {args.out}")
    return EXIT_OK


def cmd_train_sra(args) -> int:
    cfg = load_config(args.config)
    dataset = synth.load_dataset(args.data)
    tcn_cfg = sra.TcnAeConfig(lr=cfg.sra.lr, epochs=cfg.sra.epochs,
                              batch=cfg.sra.batch, seed=cfg.seed)
    model = sra.train_sra([item.series for item in dataset], tcn_cfg)
    sra.save_sra_checkpoint(args.out, model)
    print(f"trained on {len(dataset)} series, final loss "
          f"{model.loss_history[-1]:.5f} -> {args.out}")
    return EXIT_OK


def _load_labeled_segments(path: str):
    if os.path.exists(os.path.join(path, "labels.json")):
        dataset = synth.load_dataset(path)
        segments = []
        for item in dataset:
            segments.extend(synth.labeled_segments(item))
        return segments
    files = sorted(glob.glob(os.path.join(path, "*.jsonl")))
    if not files:
        raise FileNotFoundError(f"{path}: neither labels.json nor *.jsonl found")
    segments = []
    for f in files:
        segments.extend(segmenter.read_segments_jsonl(f))
    return segments


def cmd_train_ki(args) -> int:
    cfg = load_config(args.config)
    segments = _load_labeled_segments(args.segments)
    layout = inference.LAYOUTS[args.layout]()
    model = inference.new_ki_model(layout, seed=cfg.seed, lambda_=args.lambda_)
    inference.train_adversarial(segments, model, epochs=cfg.ki.epochs,
                                lr=cfg.ki.lr, batch=cfg.ki.batch, seed=cfg.seed)
    inference.save_ki_checkpoint(args.out, model)
    print(f"trained on {len(segments)} segments, final Lc "
          f"{model.loss_history[-1]:.4f} -> {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = inference.load_ki_checkpoint(args.model)
    segments = segmenter.read_segments_jsonl(args.segments)
    if not segments:
        print("no segments to classify", file=sys.stderr)
        return EXIT_NO_RESULT
    dists = [inference.classify(model, seg) for seg in segments]
    candidates = inference.rank_passwords(dists, model.layout.keys, args.topn)
    payload = {
        "n_segments": len(segments),
        "keys": ["".join(model.layout.keys[int(np.argmax(d))]) for d in dists],
        "candidates": [{"password": c.password, "probability": c.probability}
                       for c in candidates],
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"{len(candidates)} candidates -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(args.truth, "r", encoding="utf-8") as fh:
        truth = json.load(fh)
    if os.path.isdir(args.candidates):
        files = sorted(glob.glob(os.path.join(args.candidates, "*.json")))
    else:
        files = [args.candidates]
    if not files:
        print("no candidate files", file=sys.stderr)
        return EXIT_NO_RESULT

    results = []
    key_hits = key_total = 0
    for f in files:
        stem = os.path.splitext(os.path.basename(f))[0]
        if isinstance(truth, str):
            true_pw = truth
        else:
            if stem not in truth:
                print(f"truth file has no entry for {stem!r}", file=sys.stderr)
                return EXIT_DATA
            true_pw = truth[stem]
        with open(f, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        cands = [inference.PasswordCandidate(c["password"], c["probability"])
                 for c in payload.get("candidates", [])]
        results.append((cands, true_pw))
        for predicted, actual in zip(payload.get("keys", []), true_pw):
            key_total += 1
            key_hits += int(predicted == actual)

    table = {}
    for n in (1, 5, 10, 20, 50, 100):
        table[str(n)] = inference.top_n_accuracy(results, n)
    classification = key_hits / key_total if key_total else 0.0
    print(f"keystroke classification accuracy: {classification:.3f} "
          f"({key_hits}/{key_total})")
    print("top-N password accuracy:")
    for n in (1, 5, 10, 20, 50, 100):
        print(f"  top-{n:<3d} {table[str(n)]:.3f}")
    if args.out:
        payload = {"classification_accuracy": classification,
                   "top_n_accuracy": table, "n_trials": len(results)}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    counts = {}
    try:
        for part in args.count.split(","):
            count, length = part.lower().split("x")
            counts[int(length)] = counts.get(int(length), 0) + int(count)
    except ValueError:
        print(f"bad --count {args.count!r}; use COUNTxLENGTH", file=sys.stderr)
        return EXIT_USAGE
    layout = inference.LAYOUTS[args.layout]()
    cfg = synth.SynthConfig(layout=layout, seed=args.seed)
    dataset = synth.synth_dataset(counts, cfg, seed=args.seed)
    if args.ratio < 1.0:
        dataset = [synth.apply_traffic(item, args.ratio, seed=args.seed + i)[0]
                   for i, item in enumerate(dataset)]
    synth.save_dataset(args.out, dataset)
    total = sum(counts.values())
    print(f"{total} series -> {args.out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    mac = fr.mac_parse(args.mac)
    db = load_ip_database(args.ipdb)
    sra_model = sra.load_sra_checkpoint(args.sra)
    ki_model = inference.load_ki_checkpoint(args.ki)
    report_obj = run_attack(args.pcap, mac, db, sra_model, ki_model, cfg,
                            k_keys=args.k, take_last=args.take_last)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(dump_report(report_obj))
    ok_windows = [w for w in report_obj["windows"] if w["candidates"]]
    print(f"{len(report_obj['windows'])} window(s), "
          f"{len(ok_windows)} with candidates -> {args.out}")
    return EXIT_OK if ok_windows else EXIT_NO_RESULT


def cmd_plot(args) -> int:
    svg_path, csv_path = report.render(args.kind, args.in_path, args.out)
    print(f"wrote {svg_path} and {csv_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
