"""Command-line pipeline: synth -> split -> train -> eval-ver / eval-id -> report.

Every command accepts ``--seed``, ``--config`` and ``--out``. A config file is
flat ``key = value`` text whose keys are the long flag names (``-`` or ``_``);
flags given on the command line override it. Each run writes
``<out>.manifest`` holding the command and every resolved parameter, and
``xmodal <command> --config <out>.manifest`` reproduces the run byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import XModalError
from .protocol import (
    EvalReport,
    SplitSpec,
    evaluate_cross_modal,
    evaluate_identification,
    evaluate_speaker_verification,
    identification_training_records,
    make_identification_split,
    make_identity_split,
    merge_reports,
    train_linear_classifier,
)
from .store import filter_corpus, read_corpus, write_corpus
from .synth import SynthConfig, generate
from .trainer import TrainConfig, train
from .triplet import LossWeights
from .twobranch import load_model, save_model

MANIFEST_SUFFIX = ".manifest"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="flat key = value file; flags override it")
    p.add_argument("--out", default=None, help="output path (a manifest is written beside it)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="xmodal", description="Cross-modal face-voice embedding experiments.")
    parser.add_argument("--version", action="version", version=f"xmodal {__version__}")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    cmds = {}

    p = cmds["synth"] = subs.add_parser("synth", help="generate a synthetic corpus CSV")
    _common(p)
    d = SynthConfig()
    p.add_argument("--n-identities", type=int, default=d.n_identities)
    p.add_argument("--samples", type=int, default=d.samples_per_cell, help="samples per identity, language and modality")
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--face-dim", type=int, default=d.face_dim)
    p.add_argument("--voice-dim", type=int, default=d.voice_dim)
    p.add_argument("--sigma", type=float, default=d.noise_sigma)
    p.add_argument("--signal-norm", type=float, default=d.signal_norm)
    p.add_argument("--shift", type=float, default=d.shift)
    p.add_argument("--languages", default=",".join(d.languages), help="comma list, primary first")
    p.add_argument("--per-identity-shift", type=_flag, default=d.per_identity_shift)

    p = cmds["split"] = subs.add_parser("split", help="write an evaluation split (JSON)")
    _common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--kind", default="cross_modal_verification",
                   choices=["cross_modal_verification", "speaker_verification", "speaker_identification"])
    p.add_argument("--lang", default=None, help="training language")
    p.add_argument("--n-test", type=int, default=6, help="test identities (verification kinds)")
    p.add_argument("--test-fraction", type=float, default=0.3, help="held-out tracks (identification)")

    p = cmds["train"] = subs.add_parser("train", help="train a two-branch model")
    _common(p)
    t, w = TrainConfig(), LossWeights()
    p.add_argument("--corpus", default=None)
    p.add_argument("--split", default=None, help="restrict training to the split's train identities")
    p.add_argument("--lang", default=None, help="training language (defaults to the split's)")
    p.add_argument("--margin", type=float, default=w.margin)
    p.add_argument("--lambda1", type=float, default=w.lambda1)
    p.add_argument("--lambda2", type=float, default=w.lambda2)
    p.add_argument("--lambda3", type=float, default=w.lambda3)
    p.add_argument("--reduction", choices=["sum", "mean"], default=w.reduction)
    p.add_argument("--lr", type=float, default=t.learning_rate)
    p.add_argument("--momentum", type=float, default=t.momentum)
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--P", type=int, default=t.P)
    p.add_argument("--K", type=int, default=t.K)
    p.add_argument("--hidden-dim", type=int, default=t.hidden_dim)
    p.add_argument("--out-dim", type=int, default=t.out_dim)

    p = cmds["eval-ver"] = subs.add_parser("eval-ver", help="verification EER per test language")
    _common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--checkpoint", default=None, help="required for cross-modal splits")
    p.add_argument("--pair-policy", choices=["exhaustive", "balanced"], default="exhaustive")

    p = cmds["eval-id"] = subs.add_parser("eval-id", help="linear-classifier Top-1 per test language")
    _common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)

    p = cmds["report"] = subs.add_parser("report", help="merge report CSVs and add heard-vs-unheard rows")
    _common(p)
    p.add_argument("inputs", nargs="*", help="report CSVs")
    return parser, cmds


def read_config(path) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(argv: Sequence[str]) -> argparse.Namespace:
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    if args.config:
        sub = cmds[args.command]
        known = {a.dest for a in sub._actions} - {"help", "config"}
        values = read_config(args.config)
        command = values.pop("command", args.command)
        if command != args.command:
            raise UsageError(f"{args.config} is a manifest for '{command}', not '{args.command}'")
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown key {unknown[0]!r}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    if isinstance(getattr(args, "inputs", None), str):
        args.inputs = [s for s in args.inputs.split(",") if s]
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    return args


def _manifest_text(args: argparse.Namespace) -> str:
    lines = ["# xmodal run manifest; rerun with: xmodal <command> --config <this file>", f"command = {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "config") or value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = int(value)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if not value:
        raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")
    return value


def _write(path, text: str) -> None:
    Path(path).write_text(text)


def _cmd_synth(args) -> None:
    cfg = SynthConfig(
        n_identities=args.n_identities,
        samples_per_cell=args.samples,
        latent_dim=args.latent_dim,
        face_dim=args.face_dim,
        voice_dim=args.voice_dim,
        noise_sigma=args.sigma,
        signal_norm=args.signal_norm,
        shift=args.shift,
        languages=tuple(s.strip() for s in args.languages.split(",") if s.strip()),
        seed=args.seed,
        per_identity_shift=args.per_identity_shift,
    )
    _write(args.out, write_corpus(generate(cfg)))


def _cmd_split(args) -> None:
    corpus = read_corpus(_need(args, "corpus"))
    lang = _need(args, "lang")
    if args.kind == "speaker_identification":
        split = make_identification_split(corpus, args.test_fraction, args.seed, lang)
    else:
        split = make_identity_split(corpus, args.n_test, lang, args.seed, kind=args.kind)
    _write(args.out, split.to_json())


def _load_split(args, corpus) -> SplitSpec:
    split = SplitSpec.from_json(Path(_need(args, "split")).read_text())
    split.validate_against(corpus)
    return split


def history_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".history.csv")


def _cmd_train(args) -> None:
    corpus = read_corpus(_need(args, "corpus"))
    identities = None
    lang = args.lang
    if args.split:
        split = _load_split(args, corpus)
        identities = split.train_identities
        lang = lang or split.train_language
    if not lang:
        raise UsageError("train: --lang is required when no --split is given")
    data = filter_corpus(corpus, by_language=lang, by_identities=identities)
    weights = LossWeights(args.margin, args.lambda1, args.lambda2, args.lambda3, args.reduction)
    cfg = TrainConfig(
        P=args.P, K=args.K, learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
        seed=args.seed, loss_weights=weights, hidden_dim=args.hidden_dim, out_dim=args.out_dim,
    )
    model, history = train(data, cfg)
    _write(args.out, save_model(model))
    _write(history_path(args.out), history.to_csv())


def _cmd_eval_ver(args) -> None:
    corpus = read_corpus(_need(args, "corpus"))
    split = _load_split(args, corpus)
    model = load_model(Path(args.checkpoint).read_text()) if args.checkpoint else None
    if split.kind == "cross_modal_verification":
        if model is None:
            raise UsageError("eval-ver: --checkpoint is required for cross-modal splits")
        report = evaluate_cross_modal(model, corpus, split, args.pair_policy, args.seed)
    elif split.kind == "speaker_verification":
        report = evaluate_speaker_verification(corpus, split, model, args.pair_policy, args.seed)
    else:
        raise UsageError(f"eval-ver: {split.kind} splits are evaluated with eval-id")
    _write(args.out, report.to_csv())


def _cmd_eval_id(args) -> None:
    corpus = read_corpus(_need(args, "corpus"))
    split = _load_split(args, corpus)
    if split.kind != "speaker_identification":
        raise UsageError(f"eval-id: needs a speaker_identification split, got {split.kind}")
    records = identification_training_records(corpus, split)
    clf = train_linear_classifier(records, split.train_identities, args.epochs, args.lr, args.seed)
    _write(args.out, evaluate_identification(clf, corpus, split, args.seed).to_csv())


def _cmd_report(args) -> None:
    if not args.inputs:
        raise UsageError("report: at least one report CSV is required")
    reports = [EvalReport.from_csv(Path(p).read_text()) for p in args.inputs]
    _write(args.out, merge_reports(reports).to_csv())


COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval-ver": _cmd_eval_ver,
    "eval-id": _cmd_eval_id,
    "report": _cmd_report,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _resolve(argv)
        COMMANDS[args.command](args)
        _write(f"{args.out}{MANIFEST_SUFFIX}", _manifest_text(args))
    except UsageError as exc:
        print(str(exc).replace("\n", " "), file=sys.stderr)
        return 2
    except (XModalError, OSError, ValueError) as exc:
        print(f"xmodal: error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
