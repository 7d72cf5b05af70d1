"""Command-line surface: codebook building, synthetic data, training,
prediction, and evaluation.

Exit codes: 0 success, 2 usage/format error, 3 runtime error.  Every command
is deterministic given its seed and inputs; file writes are atomic
(write-temp-then-rename).  ``STAOG_THREADS`` caps per-video worker threads
during prediction.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor

from .errors import ArgumentError, FormatError, StaogError
from .features import (
    build_codebook,
    dump_json,
    read_codebook,
    read_features,
    read_synth_spec,
    synth_dataset,
    write_text_atomic,
)
from .learning import TrainConfig, predict, train_multiclass
from .model import StructureConfig, load_model, save_model


def _parse_structure(obj: dict) -> StructureConfig:
    defaults = StructureConfig()
    grid = obj.get("grid", {})
    near = obj.get("near_radius", defaults.near_radius)
    return StructureConfig(
        temporal_slots=int(obj.get("temporal_slots", defaults.temporal_slots)),
        grid_rows=int(grid.get("rows", defaults.grid_rows)),
        grid_cols=int(grid.get("cols", defaults.grid_cols)),
        max_leaves=int(obj.get("max_leaves", defaults.max_leaves)),
        span=int(obj.get("span", defaults.span)),
        part_width=float(obj.get("part_width", defaults.part_width)),
        part_height=float(obj.get("part_height", defaults.part_height)),
        frame_width=int(obj.get("frame_width", defaults.frame_width)),
        frame_height=int(obj.get("frame_height", defaults.frame_height)),
        shift_steps=tuple(int(s) for s in obj.get("shift_steps", defaults.shift_steps)),
        max_hypotheses=int(obj.get("max_hypotheses", defaults.max_hypotheses)),
        search_radius=int(obj.get("search_radius", defaults.search_radius)),
        search_stride=int(obj.get("search_stride", defaults.search_stride)),
        near_radius=None if near is None else float(near),
    ).validate()


def _parse_train(obj: dict) -> TrainConfig:
    defaults = TrainConfig()
    return TrainConfig(
        c=float(obj.get("c", defaults.c)),
        max_iters=int(obj.get("max_iters", defaults.max_iters)),
        energy_tol=float(obj.get("energy_tol", defaults.energy_tol)),
        create_budget=int(obj.get("create_budget", defaults.create_budget)),
        remove_budget=int(obj.get("remove_budget", defaults.remove_budget)),
        min_cluster_size=int(obj.get("min_cluster_size", defaults.min_cluster_size)),
        cut_tol=float(obj.get("cut_tol", defaults.cut_tol)),
        max_cut_rounds=int(obj.get("max_cut_rounds", defaults.max_cut_rounds)),
        qp_tol=float(obj.get("qp_tol", defaults.qp_tol)),
        seed=int(obj.get("seed", defaults.seed)),
    ).validate()


def read_run_config(path) -> tuple[StructureConfig, TrainConfig]:
    """Read the training config file; missing keys fall back to defaults."""
    if path is None:
        return StructureConfig().validate(), TrainConfig().validate()
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    try:
        return _parse_structure(obj.get("structure", {})), _parse_train(obj.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad config value: {exc}") from exc


def _threads() -> int:
    raw = os.environ.get("STAOG_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ArgumentError(f"STAOG_THREADS must be an integer, got {raw!r}") from None


def _map_videos(fn, videos):
    n = _threads()
    if n <= 1 or len(videos) <= 1:
        return [fn(v) for v in videos]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, videos))


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_dict(args) -> int:
    if args.k < 1:
        raise ArgumentError(f"--k must be >= 1, got {args.k}")
    videos = read_features(args.features)
    descriptors = [p.descriptor for v in videos for p in v.points]
    if not descriptors:
        raise FormatError(f"{args.features}: no interest points to cluster")
    book = build_codebook(descriptors, args.k, args.seed)
    from .features import write_codebook

    write_codebook(book, args.out)
    print(f"k={book.size} dim={book.dim}")
    return 0


def cmd_synth(args) -> int:
    spec = read_synth_spec(args.spec)
    videos = synth_dataset(spec, args.seed)
    from .features import write_features

    write_features(videos, args.out)
    print(f"videos={len(videos)} classes={len(spec.classes)}")
    return 0


def cmd_train(args) -> int:
    videos = read_features(args.features)
    if not videos:
        raise FormatError(f"{args.features}: no videos")
    unlabeled = [v.id for v in videos if v.label is None]
    if unlabeled:
        raise FormatError(
            f"{args.features}: {len(unlabeled)} videos lack labels (first: {unlabeled[0]!r})"
        )
    codebook = read_codebook(args.codebook)
    structure, config = read_run_config(args.config)
    log_records: list[str] = []

    def log(cls, record):
        log_records.append(dump_json({"class": cls, **record}))

    models = train_multiclass(videos, codebook, structure, config, log=log)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    stem = os.path.splitext(os.path.basename(args.out))[0]
    codebook_ref = os.path.relpath(os.path.abspath(args.codebook), out_dir)
    manifest: dict = {"version": 1, "classes": {}}
    for cls, model in models.items():
        model.codebook_ref = codebook_ref
        name = f"{stem}.{_safe_name(cls)}.model.json"
        path = os.path.join(out_dir, name)
        save_model(model, path)
        manifest["classes"][cls] = {"path": name, "sha256": _sha256(path)}
    write_text_atomic(args.out, dump_json(manifest) + "\n")
    if args.log:
        write_text_atomic(args.log, "".join(line + "\n" for line in log_records))
    print(f"classes={len(models)} manifest={args.out}")
    return 0


def _load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        if int(obj["version"]) != 1:
            raise FormatError(f"{path}: unsupported manifest version {obj['version']}")
        classes = obj["classes"]
        if not isinstance(classes, dict) or not classes:
            raise FormatError(f"{path}: manifest lists no classes")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad manifest: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    models = {}
    for cls in sorted(classes):
        entry = classes[cls]
        try:
            model_path = os.path.join(base, entry["path"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad manifest entry for {cls!r}: {exc}") from exc
        digest = _sha256(model_path)
        if digest != entry.get("sha256", digest):
            raise FormatError(f"{model_path}: checksum mismatch against manifest")
        with open(model_path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{model_path}: not valid JSON: {exc}") from exc
        ref = payload.get("codebook_ref", "")
        if not ref:
            raise FormatError(f"{model_path}: model lacks a codebook reference")
        codebook = read_codebook(os.path.join(os.path.dirname(model_path), ref))
        models[cls] = load_model(model_path, codebook)
    return models


def cmd_predict(args) -> int:
    models = _load_manifest(args.models)
    videos = read_features(args.features)

    def score_one(video):
        best, results = predict(models, video)
        win = results[best].assignment
        return dump_json(
            {
                "id": video.id,
                "scores": {cls: results[cls].score for cls in sorted(results)},
                "predicted": best,
                "assignment": {
                    "class": best,
                    "shifts": list(win.shifts),
                    "anchor_frames": list(win.anchor_frames),
                    "active": list(win.active),
                    "positions": [list(p) for p in win.positions],
                },
            }
        )

    lines = _map_videos(score_one, videos)
    write_text_atomic(args.out, "".join(line + "\n" for line in lines))
    print(f"videos={len(videos)} classes={len(models)}")
    return 0


def _read_scores(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    (str(obj["id"]), {str(c): float(s) for c, s in obj["scores"].items()},
                     str(obj["predicted"]))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad score record: {exc}") from exc
    return records


def average_precision(ranked_positive_flags) -> float | None:
    """Mean precision at each positive's rank; None without positives."""
    hits = 0
    precisions = []
    for rank, is_pos in enumerate(ranked_positive_flags, start=1):
        if is_pos:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def cmd_eval(args) -> int:
    records = _read_scores(args.scores)
    if not records:
        raise FormatError(f"{args.scores}: no score records")
    label_of = {v.id: v.label for v in read_features(args.features)}
    for vid, _, _ in records:
        if vid not in label_of:
            raise FormatError(f"{args.scores}: id {vid!r} missing from the features file")
        if label_of[vid] is None:
            raise FormatError(f"{args.features}: video {vid!r} lacks a label")
    classes = sorted({label_of[vid] for vid, _, _ in records})
    print(f"{'class':<16}{'n':>6}{'accuracy':>10}{'AP':>10}")
    accs = []
    aps = []
    for cls in classes:
        members = [(vid, pred) for vid, _, pred in records if label_of[vid] == cls]
        correct = sum(1 for _, pred in members if pred == cls)
        acc = correct / len(members)
        accs.append(acc)
        ranked = sorted(records, key=lambda r: (-r[1].get(cls, float("-inf")), r[0]))
        ap = average_precision([label_of[vid] == cls for vid, _, _ in ranked])
        if ap is not None:
            aps.append(ap)
        ap_text = "n/a" if ap is None else f"{ap:.4f}"
        print(f"{cls:<16}{len(members):>6}{acc:>10.4f}{ap_text:>10}")
    mean_acc = sum(accs) / len(accs)
    map_text = "n/a" if not aps else f"{sum(aps) / len(aps):.4f}"
    print(f"{'mean':<16}{len(records):>6}{mean_acc:>10.4f}{map_text:>10}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="staog",
        description="Action classification over interest-point feature files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dict", help="cluster descriptors into a codebook")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, default=300, help="codebook size (default 300)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dict)

    p = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one-vs-rest models")
    p.add_argument("--features", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--config", default=None, help="JSON config; defaults when omitted")
    p.add_argument("--out", required=True, help="manifest path; models live alongside")
    p.add_argument("--log", default=None, help="per-iteration JSON-lines training log")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="score videos against trained models")
    p.add_argument("--models", required=True, help="manifest written by train")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser(
        "eval",
        help="per-class accuracy and AP (mean precision at each positive's rank)",
    )
    p.add_argument("--scores", required=True, help="score file written by predict")
    p.add_argument("--features", required=True, help="features with ground-truth labels")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StaogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # malformed inputs must never escape as tracebacks
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
