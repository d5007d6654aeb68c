"""Command-line entry point: ``mrgnet gen | train | infer | eval``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Thread count for per-scene inference comes from ``MRGNET_THREADS``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .datagen import (
    GenConfig,
    SceneFormatError,
    default_taxonomy,
    gen_dataset,
    load_taxonomy,
    read_scenes,
    write_scenes,
)
from .geometry import Box2D
from .inference import InferenceConfig, RelationshipTriplet, export_dot, export_json
from .metrics import MatchMode, evaluate_dataset
from .model import ModelConfig, ModelParameters
from .nn import load_params, params_to_json
from .pipeline import ground_truth_triplets, predict_scenes, thread_count
from .training import TrainConfig, TrainingDiverged, history_csv, load_config, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mrgnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, args: argparse.Namespace, started: float,
                   inputs: list[Path] = (), **extra) -> None:
    doc = {
        "command": command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "elapsed_seconds": round(time.time() - started, 3),
        "version": __version__,
        "inputs": {str(p): file_digest(p) for p in inputs},
        **extra,
    }
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("k values must be >= 1")
    return vals


def _mode_list(text: str) -> list[MatchMode]:
    out = []
    for v in text.split(","):
        v = v.strip()
        if v == "both":
            out += [MatchMode.PHRASE, MatchMode.RELATIONSHIP]
            continue
        try:
            out.append(MatchMode(v))
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown mode {v!r}; use phrase, relationship or both")
    return out


def _load_model(path: Path) -> ModelParameters:
    try:
        return ModelParameters.from_arrays(load_params(path))
    except (KeyError, json.JSONDecodeError) as exc:
        raise SceneFormatError(f"{path}: not a model file ({exc})") from exc


def _scene_files(target: Path) -> list[Path]:
    if target.is_dir():
        files = sorted(target.glob("*.jsonl"))
        if not files:
            raise SceneFormatError(f"{target}: no .jsonl scene files")
        return files
    if not target.exists():
        raise SceneFormatError(f"{target}: no such file")
    return [target]


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    started = time.time()
    out: Path = args.out
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else default_taxonomy(args.seed, args.d_in)
    ds = gen_dataset(taxonomy, args.train, args.test, args.seed, GenConfig(noise_sigma=args.noise))
    out.mkdir(parents=True, exist_ok=True)
    write_scenes(out / "train.jsonl", ds.train)
    write_scenes(out / "test.jsonl", ds.test)
    atomic_write(out / "taxonomy.json", taxonomy.to_json() + "\n")
    write_manifest(out / "manifest.json", "gen", args, started,
                   inputs=[args.taxonomy] if args.taxonomy else [], dataset=ds.manifest,
                   outputs=["train.jsonl", "test.jsonl", "taxonomy.json"])
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    data = _scene_files(args.data / "train.jsonl" if args.data.is_dir() else args.data)[0]
    scenes = read_scenes(data)
    if not scenes:
        raise SceneFormatError("training set is empty")
    base = load_config(args.config) if args.config else TrainConfig()
    d_in = len(scenes[0].objects[0].feature)
    model_cfg = ModelConfig(**{**vars(base.model), "d_in": d_in, "grid": args.grid})
    cfg = TrainConfig(**{
        **vars(base),
        "epochs": args.epochs if args.epochs is not None else base.epochs,
        "initial_lr": args.lr if args.lr is not None else base.initial_lr,
        "seed": args.seed if args.seed is not None else base.seed,
        "model": model_cfg,
    })
    result = train(scenes, cfg)
    out: Path = args.out
    atomic_write(out, params_to_json(result.params.to_arrays()) + "\n")
    atomic_write(out.with_suffix(".loss.csv"), history_csv(result.history))
    atomic_write(out.with_suffix(".config.json"), cfg.to_json() + "\n")
    write_manifest(out.with_suffix(".manifest.json"), "train", args, started, inputs=[data],
                   config=json.loads(cfg.to_json()), steps=result.steps,
                   outputs=[out.name, out.with_suffix(".loss.csv").name])
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs ({result.steps} steps); final mean loss {last.mean_loss:.4f}")
    return EXIT_OK


def _infer_config(args) -> InferenceConfig:
    return InferenceConfig(
        grid=args.grid,
        cluster_threshold=args.cluster_threshold,
        nms_threshold=args.nms_threshold,
        min_score=getattr(args, "min_score", 0.05),
        attribute_gating=not args.no_gating,
    )


def cmd_infer(args) -> int:
    started = time.time()
    params = _load_model(args.model)
    files = _scene_files(args.scene)
    scenes = [s for f in files for s in read_scenes(f)]
    results = predict_scenes(params, scenes, _infer_config(args))
    out: Path = args.out
    for sid in sorted(results):
        _, mrg = results[sid]
        atomic_write(out / f"{sid}.json", export_json(mrg))
        if args.dot:
            atomic_write(out / f"{sid}.dot", export_dot(mrg))
    write_manifest(out / "manifest.json", "infer", args, started, inputs=[args.model, *files],
                   scenes=sorted(results),
                   threads=thread_count())
    print(f"wrote {len(results)} graphs to {out}")
    return EXIT_OK


def triplet_to_dict(t: RelationshipTriplet) -> dict:
    return {"subject": t.subject_index, "relationship": t.relationship_class, "object": t.object_index,
            "score": t.score, "subject_box": t.subject_box.as_list(), "object_box": t.object_box.as_list()}


def triplet_from_dict(d: dict) -> RelationshipTriplet:
    return RelationshipTriplet(int(d["subject"]), int(d["relationship"]), int(d["object"]), float(d["score"]),
                               Box2D.from_seq(d["subject_box"]), Box2D.from_seq(d["object_box"]))


def read_predictions(path: Path) -> dict[str, list[RelationshipTriplet]]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out[doc["scene_id"]] = [triplet_from_dict(t) for t in doc["triplets"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def cmd_eval(args) -> int:
    started = time.time()
    if (args.model is None) == (args.predictions is None):
        raise UsageError("give exactly one of --model or --predictions")
    data = args.data / "test.jsonl" if args.data.is_dir() else args.data
    data = _scene_files(data)[0]
    scenes = read_scenes(data)
    gts = {s.scene_id: ground_truth_triplets(s) for s in scenes}
    if args.model is not None:
        params = _load_model(args.model)
        results = predict_scenes(params, scenes, _infer_config(args))
        preds = {sid: trip for sid, (trip, _) in results.items()}
    else:
        preds = read_predictions(args.predictions)
    report = evaluate_dataset(preds, gts, args.k, args.mode)
    out: Path = args.out
    atomic_write(out, report.to_csv())
    atomic_write(out.with_suffix(".txt"), report.to_text())
    if args.model is not None:
        lines = [json.dumps({"scene_id": sid, "triplets": [triplet_to_dict(t) for t in preds[sid]]})
                 for sid in sorted(preds)]
        atomic_write(out.with_suffix(".predictions.jsonl"), "".join(l + "\n" for l in lines))
    write_manifest(out.with_suffix(".manifest.json"), "eval", args, started,
                   inputs=[data, args.model if args.model is not None else args.predictions],
                   recalls={f"{m.value}@{k}": report.recall(m, k) for m in report.modes for k in report.k_list})
    print(report.to_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_inference_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=5, help="subgraph feature-map grid size (must match training)")
    p.add_argument("--cluster-threshold", type=float, default=0.5)
    p.add_argument("--nms-threshold", type=float, default=0.5)
    p.add_argument("--no-gating", action="store_true",
                   help="score triplets with objectness only, without the subject attribute probability")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrgnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic train/test dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test", type=int, default=40)
    p.add_argument("--taxonomy", type=Path, help="taxonomy JSON (default: built-in kitchen taxonomy)")
    p.add_argument("--d-in", type=int, default=32, help="appearance feature dimension")
    p.add_argument("--noise", type=float, default=0.1, help="feature noise sigma")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on DATA/train.jsonl")
    p.add_argument("--data", type=Path, required=True, help="dataset directory or scene JSONL file")
    p.add_argument("--config", type=Path, help="TrainConfig JSON; flags below override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, default=5)
    p.add_argument("--out", type=Path, required=True, help="model JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="build MRGs for scenes")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--scene", type=Path, required=True, help="scene JSONL file or directory of them")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dot", action="store_true", help="also write Graphviz DOT files")
    p.add_argument("--min-score", type=float, default=0.05)
    _add_inference_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="phrase / relationship Recall@K")
    p.add_argument("--model", type=Path)
    p.add_argument("--predictions", type=Path, help="replay saved predictions JSONL instead of a model")
    p.add_argument("--data", type=Path, required=True, help="dataset directory (uses test.jsonl) or scene file")
    p.add_argument("--k", type=_int_list, default=[1, 5], help="comma-separated K values, e.g. 1,5")
    p.add_argument("--mode", type=_mode_list, default=[MatchMode.PHRASE, MatchMode.RELATIONSHIP],
                   help="comma-separated: phrase, relationship, or both")
    p.add_argument("--out", type=Path, required=True, help="report CSV path")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mrgnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"mrgnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneFormatError, FileNotFoundError, ValueError) as exc:
        print(f"mrgnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
