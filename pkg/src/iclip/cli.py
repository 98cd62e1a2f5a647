"""Command-line entry point: ``iclip <command> [options]``.

Commands: synth, split, train, eval, gradcheck, ablate. Every command reads
the same flat config (``--config`` JSON plus flag overrides, flag wins) and
stamps its outputs with the config digest.

Exit codes: 0 success, 1 usage/validation, 2 numeric failure, 3 I/O.
Log verbosity comes from the ``ICLIP_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt_io
from . import tensor
from .ablation import dry_run_table, run_ablation
from .checks import CHECKS, TOLERANCE, run_checks
from .config import ABLATION_MODES, RunConfig, load_config
from .errors import ICLIPError, NumericError, UsageError
from .evaluation import write_detections, write_report
from .features import synthesize, write_fixtures
from .pipeline import initial_model, load_fixtures, evaluate_model, train_model
from .training import SplitSpec, make_split, write_loss_trace

log = logging.getLogger("iclip")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
SPLIT_FILE = "split.json"
CHECKPOINT_FILE = "checkpoint.json"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this project reserves 2 for numeric failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got '{item}'")
        out[key.strip()] = value
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flat RunConfig fields)")
    p.add_argument("--seed", type=int, help="seed for synthesis, splitting, init and batching")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field; repeatable")


def _inputs(p: argparse.ArgumentParser, split: bool = True) -> None:
    p.add_argument("--fixtures", help="directory holding frames/labels/ground_truth files")
    if split:
        p.add_argument("--split", dest="split_file", help="split file from 'iclip split'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iclip", description="Zero-shot person action detection on embedding fixtures.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic fixtures")
    _common(p)
    p.add_argument("--labels", type=int, help="number of action labels")
    p.add_argument("--dim", type=int, help="embedding width D")
    p.add_argument("--noise", type=float, help="per-coordinate noise std")

    p = sub.add_parser("split", help="partition labels into train/test")
    _common(p)
    _inputs(p, split=False)
    p.add_argument("--ratio", type=float, help="fraction of labels used for training")

    p = sub.add_parser("train", help="train interaction blocks and prompting")
    _common(p)
    _inputs(p)
    p.add_argument("--iterations", type=int, help="SGD steps")

    p = sub.add_parser("eval", help="zero-shot inference and frame mAP")
    _common(p)
    _inputs(p)
    p.add_argument("--checkpoint", help="checkpoint file from 'iclip train'")
    p.add_argument("--baseline", action="store_true", help="score with the whole-frame context baseline")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    _common(p)
    p.add_argument("--seeds", type=int, default=20, help="number of random instances per check")
    p.add_argument("--inject-fault", action="append", default=[], metavar="OP",
                   help="corrupt the backward pass of OP (negative control)")

    p = sub.add_parser("ablate", help="train/evaluate the ablation matrix")
    _common(p)
    _inputs(p)
    p.add_argument("--iterations", type=int, help="SGD steps per configuration")
    p.add_argument("--mode", choices=ABLATION_MODES, help="which tables to run")
    p.add_argument("--dry-run", action="store_true", help="print the configuration matrix only")
    return parser


_OVERRIDE_FLAGS = ("seed", "labels", "dim", "noise", "ratio", "iterations", "fixtures", "split_file", "checkpoint")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = _parse_set(args.set)
    for name in _OVERRIDE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "mode", None):
        overrides["ablate_mode"] = args.mode
    return load_config(args.config, overrides)


def _require(value: str, what: str, flag: str) -> str:
    if not value:
        raise UsageError(f"{what} is required ({flag} or the matching config field)")
    return value


def _load_split(cfg: RunConfig) -> SplitSpec:
    path = _require(cfg.split_file, "a split file", "--split")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    try:
        return SplitSpec.from_dict(raw)
    except UsageError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _fixtures(cfg: RunConfig, split: SplitSpec | None = None):
    fixtures = load_fixtures(_require(cfg.fixtures, "a fixture directory", "--fixtures"))
    if split is not None:
        missing = [n for n in split.train_labels + split.test_labels if n not in fixtures.vocabulary.names]
        if missing or len(split.train_labels) + len(split.test_labels) != len(fixtures.vocabulary):
            raise UsageError(f"{cfg.split_file}: split does not cover the fixture vocabulary "
                             f"(unknown labels: {missing})")
    return fixtures


# -- commands -------------------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    digest = cfg.digest()
    paths = write_fixtures(synthesize(cfg.synth_config()), args.out, digest)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    print(f"config_digest: {digest}")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    fixtures = _fixtures(cfg)
    split = make_split(fixtures.vocabulary, cfg.ratio, cfg.seed)
    digest = cfg.digest()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = dict(split.to_dict(), split_id=split.split_id, config_digest=digest)
    (out / SPLIT_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"split: {out / SPLIT_FILE}  train {len(split.train_labels)} / test {len(split.test_labels)}  "
          f"split_id {split.split_id}")
    print(f"config_digest: {digest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    fixtures = _fixtures(cfg, split)
    digest = cfg.digest()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    if cfg.iterations == 0:
        model, trace = initial_model(cfg, fixtures.vocabulary.dim), []
    else:
        result = train_model(cfg, fixtures, split)
        model, trace = result.model, result.trace
    ckpt_io.save(out / CHECKPOINT_FILE, ckpt_io.Checkpoint(model, digest, fixtures.vocabulary.digest()))
    write_loss_trace(out / "loss.csv", trace, digest)
    final = f"final loss {trace[-1][2]:.4f}, " if trace else ""
    print(f"checkpoint: {out / CHECKPOINT_FILE}")
    print(f"loss trace: {out / 'loss.csv'}  ({final}{time.perf_counter() - started:.1f}s)")
    print(f"config_digest: {digest}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    fixtures = _fixtures(cfg, split)
    if args.baseline:
        model, digest = None, cfg.digest(baseline=True)
    else:
        path = _require(cfg.checkpoint, "a checkpoint", "--checkpoint")
        ckpt = ckpt_io.load(path, vocab=fixtures.vocabulary)
        model, digest = ckpt.model, cfg.digest(baseline=False, checkpoint_train_digest=ckpt.train_digest)
    detections, report = evaluate_model(cfg, fixtures, split, model, digest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = "baseline" if args.baseline else "model"
    write_detections(out / f"detections_{stem}.jsonl", detections, digest)
    write_report(out / f"report_{stem}.json", report)
    print(report.table())
    print(f"detections: {out / f'detections_{stem}.jsonl'}")
    print(f"report: {out / f'report_{stem}.json'}")
    print(f"split_id: {split.split_id}  config_digest: {digest}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    faults = set(args.inject_fault)
    known_ops = {op for c in CHECKS for op in c.ops}
    unknown = faults - known_ops
    if unknown:
        raise UsageError(f"--inject-fault: unknown op(s) {sorted(unknown)}; choose from {sorted(known_ops)}")
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    tensor.FAULTS.update(faults)
    try:
        rows = run_checks(seeds)
    finally:
        tensor.FAULTS.difference_update(faults)
    print(f"{'check':<26}{'max rel err':>14}  result")
    failed = 0
    for name, err in rows:
        ok = err < TOLERANCE
        failed += not ok
        print(f"{name:<26}{err:14.3e}  {'pass' if ok else 'FAIL'}")
    print(f"seeds {seeds.start}..{seeds.stop - 1}, tolerance {TOLERANCE:g}, config_digest: "
          f"{cfg.digest(gradcheck_seeds=args.seeds, faults=sorted(faults))}")
    if failed:
        raise NumericError(f"{failed} gradient check(s) exceeded tolerance {TOLERANCE:g}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    if args.dry_run:
        print(dry_run_table(cfg, cfg.ablate_mode))
        return EXIT_OK
    split = _load_split(cfg)
    fixtures = _fixtures(cfg, split)

    def progress(res):
        print(f"  {res['order']:<12} IAP {'on ' if res['prompting'] else 'off'} mAP {100 * res['mAP']:6.2f}",
              flush=True)

    summary = run_ablation(cfg, fixtures, split, args.out, cfg.ablate_mode, progress)
    print((Path(args.out) / "ablation.txt").read_text(encoding="utf-8"), end="")
    print(f"config_digest: {summary['config_digest']}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ICLIP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ICLIPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
