"""Command-line entry point.

Subcommands cover the full pipeline: subjective-study processing, the three
training stages, correlation and question-answering evaluation, the
annotation server, and a synthetic-corpus generator for desk-scale runs.
Every command except ``serve`` is deterministic given its inputs and seed.
Any flag default can be overridden via an environment variable with the
``MINTIQA_`` prefix (for example ``MINTIQA_SEED=7``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import ManifestError, load_manifest, question_vocabulary
from .metrics import (MetricError, VqaItem, correlation_report, vqa_accuracy)
from .model import ConfigError, MintModel, ModelConfig
from .segmentation import SegmentationError
from .study import (RejectionPolicy, StudyError, load_ratings_jsonl,
                    process_study)
from .synth import make_synthetic_dataset, simulate_ratings
from .training import (TrainConfig, TrainingError, qa_pairs_for_training,
                       stage1_pretrain, stage2_instruction_tune,
                       stage3_feedback_finetune)

_USER_ERRORS = (ManifestError, StudyError, MetricError, ConfigError,
                CheckpointError, TrainingError, SegmentationError,
                FileNotFoundError, OSError, ValueError)


def _env(name: str, default=None):
    return os.environ.get(f"MINTIQA_{name.upper().replace('-', '_')}", default)


def _dump_json(obj, path=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_policy(path) -> RejectionPolicy:
    if not path:
        return RejectionPolicy()
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return RejectionPolicy(**raw)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_process_study(args) -> int:
    ratings = load_ratings_jsonl(args.ratings)
    if not ratings:
        raise StudyError("no ratings")
    table, report = process_study(ratings, _load_policy(args.policy))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(table.to_dict(), out / "mos.json")
    _dump_json(report.to_dict(), out / "report.json")
    print(f"wrote {out / 'mos.json'} and {out / 'report.json'} "
          f"(rejection rate {report.rejection_rate:.4f})")
    return 0


def _build_model(args) -> MintModel:
    if args.config:
        cfg = ModelConfig.from_json_file(args.config)
    else:
        cfg = ModelConfig()
    return MintModel(cfg, seed=args.seed)


def _ckpt_path(out: Path, stage: int) -> Path:
    return out / f"stage{stage}.ckpt"


def _save_stage(out: Path, stage: int, model: MintModel, tcfg: TrainConfig) -> None:
    save_checkpoint(_ckpt_path(out, stage), model.state_dict(),
                    {"model": model.config.to_dict(),
                     "train": tcfg.to_dict(), "stage": stage})


def _load_stage(out: Path, stage: int, seed: int) -> MintModel:
    path = _ckpt_path(out, stage)
    if not path.exists():
        raise TrainingError(f"stage {stage + 1} requires {path} "
                            f"(run stage {stage} first)")
    config, params = load_checkpoint(path)
    model = MintModel(ModelConfig.from_dict(config["model"]), seed=seed)
    model.load_state_dict(params)
    return model


def cmd_train(args) -> int:
    ds = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       epochs=args.epochs, seed=args.seed, mode=args.mode,
                       loss=args.loss)
    stages = [1, 2, 3] if args.stage == "all" else [int(args.stage)]
    history_path = out / "history.jsonl"
    for stage in stages:
        if stage == 1:
            model = _build_model(args)
            stage1_pretrain(ds, model, tcfg, history_path)
        elif stage == 2:
            model = _load_stage(out, 1, args.seed)
            stage2_instruction_tune(ds, model, tcfg, history_path=history_path)
        else:
            model = _load_stage(out, 2, args.seed)
            stage3_feedback_finetune(ds, model, tcfg, history_path=history_path)
        _save_stage(out, stage, model, tcfg)
        print(f"stage {stage} done -> {_ckpt_path(out, stage)}")
    return 0


def _load_model(path, seed: int) -> MintModel:
    config, params = load_checkpoint(path)
    model = MintModel(ModelConfig.from_dict(config["model"]), seed=seed)
    model.load_state_dict(params)
    return model


def cmd_eval(args) -> int:
    ds = load_manifest(args.manifest)
    model = _load_model(args.checkpoint, args.seed)
    labeled_dims = sorted({d for scores in ds.mos.values() for d in scores})
    head_dims = model.config.head_names[:model.config.n_regressors]
    missing = [d for d in head_dims if d not in labeled_dims]
    if missing:
        raise ConfigError(f"checkpoint heads {head_dims} but manifest lacks "
                          f"labels for {missing}")
    image_ids = sorted(iid for iid in ds.images if iid in ds.mos)
    if not image_ids:
        raise ManifestError("no labeled images to evaluate")
    preds = []
    labels = []
    for iid in image_ids:
        pixels = ds.load_pixels(iid)
        prompt = ds.prompts[ds.images[iid].prompt_id].raw_text
        preds.append(model.predict_scores(prompt, pixels).data)
        labels.append([ds.mos[iid][d] for d in head_dims])
    preds = np.array(preds)
    labels = np.array(labels)
    report = {"n_images": len(image_ids),
              "heads": {d: correlation_report(preds[:, i], labels[:, i])
                        for i, d in enumerate(head_dims)}}
    _dump_json(report, args.out)
    return 0


def cmd_vqa_eval(args) -> int:
    ds = load_manifest(args.manifest)
    model = _load_model(args.checkpoint, args.seed)
    items: list[VqaItem] = []
    for prompt, qa in qa_pairs_for_training(ds):
        vocab = question_vocabulary(qa.question, ds.vocabularies)
        if vocab is None:
            continue  # free-text questions have no closed answer set
        pixels = ds.load_pixels(qa.image_id)
        generated = model.answer(prompt, pixels, qa.question)
        items.append(VqaItem(image_id=qa.image_id, dimension=qa.dimension,
                             question=qa.question, reference_answer=qa.answer,
                             model_answer_text=generated,
                             vocabulary=tuple(vocab)))
    report = vqa_accuracy(items)
    _dump_json(report, args.out)
    return 0


def cmd_serve(args) -> int:
    from .server import AnnotationServer
    ds = load_manifest(args.manifest)
    static_dir = args.static
    if static_dir is None:
        bundled = Path(__file__).parent / "static"
        static_dir = bundled if (bundled / "index.html").is_file() else None
    app = AnnotationServer(ds, args.out, static_dir=static_dir, seed=args.seed)
    host, _, port = args.bind.rpartition(":")
    try:
        httpd = app.make_http_server(host or "127.0.0.1", int(port))
    except OSError as exc:
        raise OSError(f"cannot bind {args.bind}: {exc}") from exc
    print(f"serving on http://{httpd.server_address[0]}:{httpd.server_address[1]} "
          f"-> {args.out}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def cmd_make_synthetic(args) -> int:
    tags = tuple(t for t in args.generators.split(",") if t)
    ds = make_synthetic_dataset(args.out, n_prompts=args.n_prompts,
                                generator_tags=tags,
                                images_per_generator=args.images_per,
                                image_size=args.size, seed=args.seed)
    counts = ds.counts()
    print(f"wrote {counts['n_images']} images under {args.out}")
    if args.ratings:
        records = simulate_ratings(ds, n_subjects=args.subjects,
                                   seed=args.seed, wild_fraction=args.wild)
        with open(args.ratings, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        print(f"wrote {len(records)} simulated ratings to {args.ratings}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mintiqa",
        description="Multi-perspective quality assessment toolkit for "
                    "text-to-image outputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process-study", help="raw ratings -> MOS + report")
    p.add_argument("ratings", help="JSONL of raw ratings or server submissions")
    p.add_argument("--policy", default=_env("policy"),
                   help="JSON file with outlier-screening thresholds")
    p.add_argument("--out", default=_env("out", "study-out"),
                   help="output directory")
    p.set_defaults(func=cmd_process_study)

    p = sub.add_parser("train", help="run training stages")
    p.add_argument("--manifest", default=_env("manifest"),
                   required=_env("manifest") is None)
    p.add_argument("--config", default=_env("config"),
                   help="model configuration JSON")
    p.add_argument("--stage", choices=["1", "2", "3", "all"],
                   default=_env("stage", "all"))
    p.add_argument("--seed", type=int, default=_env("seed", "0"))
    p.add_argument("--out", default=_env("out", "train-out"))
    p.add_argument("--epochs", type=int, default=_env("epochs", "10"))
    p.add_argument("--lr", type=float, default=_env("lr", "1e-5"))
    p.add_argument("--batch-size", type=int, default=_env("batch_size", "8"))
    p.add_argument("--loss", choices=["l1", "pairwise"],
                   default=_env("loss", "l1"))
    p.add_argument("--mode", choices=["joint", "single"],
                   default=_env("mode", "joint"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-head rank correlations vs MOS")
    p.add_argument("--manifest", default=_env("manifest"),
                   required=_env("manifest") is None)
    p.add_argument("--checkpoint", default=_env("checkpoint"),
                   required=_env("checkpoint") is None)
    p.add_argument("--seed", type=int, default=_env("seed", "0"))
    p.add_argument("--out", default=_env("out"), help="report path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("vqa-eval", help="question-answering accuracy report")
    p.add_argument("--manifest", default=_env("manifest"),
                   required=_env("manifest") is None)
    p.add_argument("--checkpoint", default=_env("checkpoint"),
                   required=_env("checkpoint") is None)
    p.add_argument("--seed", type=int, default=_env("seed", "0"))
    p.add_argument("--out", default=_env("out"), help="report path (default stdout)")
    p.set_defaults(func=cmd_vqa_eval)

    p = sub.add_parser("serve", help="run the annotation-collection server")
    p.add_argument("--manifest", default=_env("manifest"),
                   required=_env("manifest") is None)
    p.add_argument("--bind", default=_env("bind", "127.0.0.1:8321"))
    p.add_argument("--out", default=_env("out", "ratings.jsonl"),
                   help="append-only submissions log")
    p.add_argument("--static", default=_env("static"),
                   help="UI bundle directory (default: packaged bundle)")
    p.add_argument("--seed", type=int, default=_env("seed", "0"))
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-synthetic", help="generate a procedural corpus")
    p.add_argument("--out", default=_env("out", "synthetic"))
    p.add_argument("--n-prompts", type=int, default=_env("n_prompts", "50"))
    p.add_argument("--generators", default=_env("generators", "gen-a,gen-b"))
    p.add_argument("--images-per", type=int, default=_env("images_per", "2"))
    p.add_argument("--size", type=int, default=_env("size", "32"))
    p.add_argument("--seed", type=int, default=_env("seed", "0"))
    p.add_argument("--ratings", default=_env("ratings"),
                   help="also write a simulated rating panel to this path")
    p.add_argument("--subjects", type=int, default=_env("subjects", "28"))
    p.add_argument("--wild", type=float, default=_env("wild", "0.02"))
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
