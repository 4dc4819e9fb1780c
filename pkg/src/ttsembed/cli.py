"""Command-line surface.

Subcommands: synthgen, prepare, train, extract, backend, eval, sweep.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericError, TtsembedError
from .pipeline import (evaluate_run, extract_embeddings, fit_backend,
                       load_dataset, prepare, train_from_config)
from .backend import save_backend, save_embeddings, load_embeddings
from .model import load_checkpoint
from .runconfig import RunConfig, load_config, save_config
from .synthcorpus import generate_corpus


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "work_dir", None):
        cfg.work_dir = args.work_dir
    return cfg


def cmd_synthgen(args) -> int:
    if args.speakers < 2:
        raise ConfigError("need at least 2 speakers (eval requires same-gender pairs)")
    generate_corpus(args.out, args.speakers, args.utts, args.seed,
                    n_eval_speakers=args.eval_speakers,
                    align_sr=args.align_sr, text_kind=args.text_kind)
    print(f"wrote corpus with {args.speakers} speakers x {args.utts} utts to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _load_run_config(args)
    manifest = prepare(cfg)
    print(f"prepared {len(manifest.records)} utterances into {cfg.work_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    model, log = train_from_config(cfg, out)
    save_config(out / "config.json", cfg)
    print(f"trained {len(log)} steps; checkpoint at {out / 'checkpoint.bin'}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_run_config(args)
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for subset in ("train", "eval"):
        embs = extract_embeddings(cfg, model, subset)
        save_embeddings(out / f"embeddings_{subset}.jsonl", embs)
        print(f"extracted {len(embs)} {subset} embeddings")
    return 0


def cmd_backend(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    embs = load_embeddings(out / "embeddings_train.jsonl")
    mean, lda, plda = fit_backend(embs, cfg.backend.lda_dim, cfg.backend.em_iters)
    save_backend(out / "backend.json", mean, lda, plda)
    print(f"fitted back-end (LDA to {lda.projection.shape[1]} dims) at {out / 'backend.json'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    report = evaluate_run(cfg, args.out, checkpoint_id=args.checkpoint or "")
    print(json.dumps({"eer_percent": report["eer_percent"],
                      "min_dcf": report["min_dcf"],
                      "n_trials": report["n_trials"]}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    values = [float(v) for v in args.values.split(",")]
    base_seed = cfg.train.seed
    rows = []
    for i, value in enumerate(values):
        run_cfg = load_config(args.config)
        run_cfg.manifest = cfg.manifest
        run_cfg.work_dir = cfg.work_dir
        setattr_by_path(run_cfg, args.param, value)
        run_cfg.train.seed = base_seed + i          # per-row derived seed
        out = Path(args.out) / f"{args.param}_{value:g}"
        out.mkdir(parents=True, exist_ok=True)
        model, _ = train_from_config(run_cfg, out)
        for subset in ("train", "eval"):
            save_embeddings(out / f"embeddings_{subset}.jsonl",
                            extract_embeddings(run_cfg, model, subset))
        embs = load_embeddings(out / "embeddings_train.jsonl")
        mean, lda, plda = fit_backend(embs, run_cfg.backend.lda_dim,
                                      run_cfg.backend.em_iters)
        save_backend(out / "backend.json", mean, lda, plda)
        report = evaluate_run(run_cfg, out)
        rows.append({"value": value, "seed": run_cfg.train.seed,
                     "eer_percent": report["eer_percent"],
                     "min_dcf": report["min_dcf"]})
    table_path = Path(args.out) / "sweep.json"
    with open(table_path, "w", encoding="utf-8") as f:
        json.dump({"param": args.param, "rows": rows}, f, indent=2, sort_keys=True)
        f.write("\n")
    for row in rows:
        print(f"{args.param}={row['value']:g}  EER={row['eer_percent']:.2f}%  "
              f"MinDCF={row['min_dcf']:.3f}")
    return 0


def setattr_by_path(cfg: RunConfig, param: str, value: float):
    """Set a swept parameter; bare names resolve inside the model section."""
    sections = {"model": cfg.model, "train": cfg.train, "backend": cfg.backend,
                "features": cfg.features, "text": cfg.text}
    if "." in param:
        section, name = param.split(".", 1)
        if section not in sections or not hasattr(sections[section], name):
            raise ConfigError(f"unknown sweep parameter {param!r}")
        setattr(sections[section], name, value)
        return
    for target in sections.values():
        if hasattr(target, param):
            setattr(target, param, value)
            return
    raise ConfigError(f"unknown sweep parameter {param!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttsembed",
        description="Speaker embeddings from multi-speaker TTS reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", help="generate a synthetic multi-speaker corpus")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-speakers", type=int, default=None)
    p.add_argument("--align-sr", type=int, default=3)
    p.add_argument("--text-kind", choices=["transcript", "alignment"],
                   default="transcript")
    p.set_defaults(func=cmd_synthgen)

    for name, fn, extra in (
            ("prepare", cmd_prepare, []),
            ("train", cmd_train, ["out"]),
            ("extract", cmd_extract, ["out", "checkpoint"]),
            ("backend", cmd_backend, ["out"]),
            ("eval", cmd_eval, ["out", "checkpoint_opt"]),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--manifest", default=None)
        p.add_argument("--work-dir", dest="work_dir", default=None)
        if "out" in extra:
            p.add_argument("--out", required=True)
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", required=True)
        if "checkpoint_opt" in extra:
            p.add_argument("--checkpoint", default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep", help="train/evaluate over a parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--work-dir", dest="work_dir", default=None)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except TtsembedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
