"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .errors import DataError, InvalidInputError, MissingArtifactError, UnknownSymbolError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("unitts")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, shards: bool = False) -> None:
    p.add_argument("--config", type=Path, help="INI experiment config")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--out", type=Path, help="overrides [run] out")
    p.add_argument("--workers", type=int, help="overrides [run] workers")
    if shards:
        p.add_argument("--shards", help="comma-separated shard amounts, e.g. 0.5,1,2")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unitts", description="Unit pre-training for low-resource TTS")
    parser.add_argument("--version", action="version", version=f"unitts {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("make-toy-corpus", help="write the bundled synthetic corpus and a matching config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--external-minutes", type=float, default=15.0)
    p.add_argument("--target-minutes", type=float, default=4.0)

    for name, text in [("train-vqvae", "train the VQ-VAE on the external corpus"),
                       ("extract-units", "encode the external corpus into unit files"),
                       ("pretrain", "train the acoustic model on unit/audio pairs")]:
        _common(sub.add_parser(name, help=text))

    for name, text in [("finetune", "swap in a phoneme table and fine-tune on paired target data"),
                       ("scratch", "train the baseline from scratch on paired target data")]:
        _common(sub.add_parser(name, help=text), shards=True)

    p = sub.add_parser("synth", help="synthesize a WAV from text or unit ids")
    _common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text")
    group.add_argument("--ids", help="space-separated symbols (unit ids for a pretrained model)")
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("eval", help="corpus MCD of a checkpoint on the held-out utterances")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="defaults to the fine-tuned model")
    p.add_argument("--name", help="report sub-directory name")

    _common(sub.add_parser("sweep", help="fine-tune and scratch models over shard amounts"), shards=True)

    p = sub.add_parser("run-all", help="train-vqvae, extract-units, pretrain, finetune and eval in order")
    _common(p)

    p = sub.add_parser("show-config", help="print the effective configuration")
    _common(p)
    p.add_argument("--toy", action="store_true", help="apply the desk-scale toy preset")
    return parser


def _load(args) -> pipeline.ExperimentConfig:
    overrides: dict = {"run": {}}
    for key in ("seed", "out", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides["run"][key] = str(value)
    cfg = pipeline.ExperimentConfig.load(getattr(args, "config", None))
    if getattr(args, "toy", False):
        cfg.update(pipeline.TOY_OVERRIDES)
    cfg.update(overrides)
    return cfg


def _shards(args):
    return pipeline.parse_shards(args.shards) if getattr(args, "shards", None) else None


def _report(record) -> None:
    print(json.dumps({"stage": record.stage, "config_hash": record.config_hash, **record.artifacts}, sort_keys=True))


def _make_toy(args) -> None:
    from .toy import build_toy_corpus

    summary = build_toy_corpus(args.out, args.external_minutes, args.target_minutes, seed=args.seed)
    cfg = pipeline.ExperimentConfig.default()
    cfg.update(pipeline.TOY_OVERRIDES)
    root = args.out.resolve()
    cfg.update({
        "run": {"out": str(root / "runs"), "seed": str(args.seed)},
        "corpus": {"external_root": str(root / "external"), "target_root": str(root / "target"),
                   "lexicon": str(root / "lexicon.txt")},
    })
    (args.out / "toy.ini").write_text(cfg.to_ini(), encoding="utf-8")
    print(json.dumps({**summary, "config": str(args.out / "toy.ini")}, sort_keys=True))


def dispatch(args) -> None:
    cmd = args.command
    if cmd == "make-toy-corpus":
        return _make_toy(args)
    cfg = _load(args)
    if cmd == "show-config":
        sys.stdout.write(cfg.to_ini())
        return
    if cmd == "train-vqvae":
        rec = pipeline.stage_train_vqvae(cfg)
    elif cmd == "extract-units":
        rec = pipeline.stage_extract_units(cfg)
    elif cmd == "pretrain":
        rec = pipeline.stage_pretrain(cfg)
    elif cmd in ("finetune", "scratch"):
        shards = _shards(args)
        if shards is not None and len(shards) != 1:
            raise pipeline.ConfigError(f"{cmd} takes a single shard amount")
        rec = pipeline.stage_finetune(cfg, cmd, shards[0] if shards else None)
    elif cmd == "synth":
        rec = pipeline.stage_synth(cfg, args.text, args.ids, args.checkpoint)
    elif cmd == "eval":
        rec = pipeline.stage_eval(cfg, args.checkpoint, args.name)
    elif cmd == "sweep":
        rec = pipeline.stage_sweep(cfg, _shards(args))
    elif cmd == "run-all":
        for stage in (pipeline.stage_train_vqvae, pipeline.stage_extract_units, pipeline.stage_pretrain,
                      pipeline.stage_finetune, pipeline.stage_eval):
            rec = stage(cfg)
            _report(rec)
        return
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown command {cmd!r}")
    _report(rec)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except (UsageError, pipeline.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MissingArtifactError, UnknownSymbolError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
