"""Command-line front end: ``generate``, ``train``, ``eval`` and ``predict``.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 training failure,
5 model file mismatch or corruption.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import errors
from .core import ALL_SCENES, LABEL_NAMES, Channel, Modality, SceneCondition, View
from .evaluation import ConfigurationSpec, emit_report, merge_reports, run_cv
from .features import extract_registered
from .fusion import load_model, predict_features, save_model, train_model
from .imgproc import dequantize, read_pgm_raw
from .synthdata import GeneratorConfig, generate, load_dataset, save_dataset

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_TRAIN, EXIT_MODEL = 0, 2, 3, 4, 5
DEFAULT_SEED = GeneratorConfig().seed


def _available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on every platform
        return os.cpu_count() or 1


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors carry exit code 2 without exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def _modalities(text: str) -> tuple[Modality, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return tuple(Modality.parse(p) for p in parts)
    except (KeyError, ValueError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _views(text: str) -> tuple[View, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) == 1 and len(parts[0]) > 1 and all(c in "tsh" for c in parts[0]):
        parts = list(parts[0])
    try:
        return tuple(View.parse(p) for p in parts)
    except (KeyError, ValueError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _scene(text: str) -> SceneCondition:
    try:
        return SceneCondition.from_name(text)
    except (KeyError, ValueError):
        names = ", ".join(s.name for s in ALL_SCENES)
        raise argparse.ArgumentTypeError(f"unknown scene {text!r}; expected one of {names}") from None


def _missing(values: Optional[Sequence[str]]) -> tuple[Modality, ...]:
    out = []
    for v in values or ():
        out.extend(_modalities(v))
    return tuple(sorted(set(out)))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trustfuse", description="Trust-weighted multimodal sleep-pose classification.")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for generation and folds")
    p.add_argument("--out-dir", default=".", help="base directory for relative paths")
    p.add_argument("--threads", type=int, default=_available_cores(), help="worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    g.add_argument("--out", required=True, help="dataset directory to write")
    g.add_argument("--actors", type=int, default=GeneratorConfig.n_actors)
    g.add_argument("--sessions", type=int, default=GeneratorConfig.sessions_per_actor)
    g.add_argument("--image-size", type=_size, default=GeneratorConfig.image_size, metavar="WxH")
    g.add_argument("--noise", type=float, default=GeneratorConfig.noise_sigma, help="RGB noise sigma")

    t = sub.add_parser("train", help="fit classifiers and the per-scene trust table")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--model", required=True, help="model file to write")
    t.add_argument("--config", default="MM", help="MM, MpM, PMM, PMpM or custom")
    t.add_argument("--modalities", type=_modalities, help="modalities for --config custom, e.g. R,D")
    t.add_argument("--views", type=_views, help="views, e.g. t,s or tsh")
    t.add_argument("--clf", choices=("lda", "svc"), default="lda")
    t.add_argument("--trust-folds", type=int, default=3, help="inner folds for trust scores; 0 = resubstitution")

    e = sub.add_parser("eval", help="cross-validated per-scene accuracy report")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--report", default="report", help="report directory to write")
    e.add_argument("--config", default="MM,MpM,PMM,PMpM", help="comma-separated configurations")
    e.add_argument("--modalities", type=_modalities, help="modalities for a custom configuration")
    e.add_argument("--views", type=_views, help="views for a custom configuration")
    e.add_argument("--clf", choices=("lda", "svc"), default="lda")
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--trust-folds", type=int, default=3)
    e.add_argument("--missing", nargs="+", metavar="MOD",
                   help="evaluate with these modalities removed (trust redistributed)")

    q = sub.add_parser("predict", help="classify one point from its image files")
    q.add_argument("--model", required=True, help="model file")
    q.add_argument("--scene", required=True, type=_scene, help="scene name, e.g. Dark-Blanket")
    q.add_argument("--image", action="append", default=[], metavar="CH=PATH",
                   help="image per channel, e.g. R-t=img.pgm or P=mat.pgm")
    q.add_argument("--missing", nargs="+", metavar="MOD", help="modalities to treat as failed")
    return p


def _path(base: str, p: str) -> Path:
    return Path(base) / p


def _spec(name: str, modalities, views) -> ConfigurationSpec:
    if name.lower() == "custom":
        if not modalities:
            raise CliError(EXIT_USAGE, "--config custom needs --modalities")
        if views is None:
            views = () if set(modalities) == {Modality.P} else (View.TOP, View.SIDE, View.HEAD)
        return ConfigurationSpec("custom", modalities, views)
    try:
        return ConfigurationSpec.preset(name, views)
    except KeyError as e:
        raise CliError(EXIT_USAGE, str(e.args[0])) from None


def _load(path: Path, threads: int):
    if not path.is_dir():
        raise CliError(EXIT_IO, f"dataset directory {path} does not exist")
    return load_dataset(path, threads=threads, keep_images=False)


def cmd_generate(args, out) -> int:
    try:
        cfg = GeneratorConfig(seed=args.seed, n_actors=args.actors, sessions_per_actor=args.sessions,
                              image_size=args.image_size, noise_sigma=args.noise, threads=args.threads)
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"bad generator settings: {e}") from None
    ds = generate(cfg)
    dest = save_dataset(ds, _path(args.out_dir, args.out), generator=cfg)
    print(f"wrote {len(ds)} points to {dest}", file=out)
    counts = {}
    for s in ds.scenes:
        counts[s] = counts.get(s, 0) + 1
    for s in sorted(counts):
        print(f"  {s.name:<22} {counts[s]}", file=out)
    return EXIT_OK


def _print_trust(model, out) -> None:
    print("scene".ljust(22) + "".join(f"{m.code:>8}" for m in model.modalities), file=out)
    for s, tv in sorted(model.trust_table.items()):
        print(s.name.ljust(22) + "".join(f"{x:8.4f}" for x in tv.w), file=out)


def cmd_train(args, out) -> int:
    spec = _spec(args.config, args.modalities, args.views)
    ds = _load(_path(args.out_dir, args.data), args.threads)
    try:
        model = train_model(ds, spec.modalities, spec.views, args.clf, args.trust_folds, args.seed)
    except (errors.TrustFuseError, ValueError) as e:
        raise CliError(EXIT_TRAIN, f"training failed: {e}") from None
    dest = _path(args.out_dir, args.model)
    save_model(model, dest)
    print(f"wrote {spec.name} model ({args.clf}, {len(model.channels)} channels) to {dest}", file=out)
    _print_trust(model, out)
    return EXIT_OK


def cmd_eval(args, out) -> int:
    names = [n for n in args.config.replace(" ", ",").split(",") if n]
    if not names:
        raise CliError(EXIT_USAGE, "--config names no configurations")
    specs = [_spec(n, args.modalities, args.views) for n in names]
    missing = _missing(args.missing)
    ds = _load(_path(args.out_dir, args.data), args.threads)
    reports = []
    try:
        for spec in specs:
            kw = dict(clf_kind=args.clf, n_folds=args.folds, seed=args.seed,
                      trust_folds=args.trust_folds, threads=args.threads)
            if not missing:
                reports.append(run_cv(ds, spec, **kw))
            else:
                gone = tuple(m for m in missing if m in spec.modalities)
                reports.append(run_cv(ds, spec, missing=gone, **kw))
    except (errors.InsufficientSamples, errors.AllModalitiesMissing, ValueError) as e:
        raise CliError(EXIT_TRAIN, f"evaluation failed: {e}") from None
    report = merge_reports(reports)
    dest = _path(args.out_dir, args.report)
    emit_report(report, dest)
    acc = report.accuracy_matrix()
    print("scene".ljust(22) + "".join(f"{n:>16}" for n in report.names), file=out)
    for i, s in enumerate(report.scenes):
        print(s.name.ljust(22) + "".join(f"{100 * v:16.1f}" for v in acc[i]), file=out)
    print("mean".ljust(22) + "".join(f"{100 * v:16.1f}" for v in np.nanmean(acc, axis=0)), file=out)
    print(f"report written to {dest}", file=out)
    return EXIT_OK


def cmd_predict(args, out) -> int:
    model_path = _path(args.out_dir, args.model)
    if not model_path.is_file():
        raise CliError(EXIT_IO, f"model file {model_path} does not exist")
    model = load_model(model_path)
    images = {}
    for item in args.image:
        key, sep, path = item.partition("=")
        if not sep:
            raise CliError(EXIT_USAGE, f"--image expects CH=PATH, got {item!r}")
        try:
            ch = Channel.parse(key)
        except (KeyError, ValueError) as e:
            raise CliError(EXIT_USAGE, f"bad channel {key!r}: {e}") from None
        images[ch] = dequantize(read_pgm_raw(_path(args.out_dir, path)))
    missing = _missing(args.missing)
    available = tuple(m for m in model.modalities if m not in missing)
    needed = [c for c in model.channels if c.modality in available]
    absent = [c.code for c in needed if c not in images]
    if absent:
        raise CliError(EXIT_USAGE, f"no image given for channels {absent}; pass them or mark the modality --missing")
    feats = extract_registered({c: images[c] for c in needed}, model.homographies, model.hog_cfg, model.gmom_cfg)
    for c in needed:
        if feats[c].size != model.feature_dims[c]:
            raise CliError(EXIT_MODEL, f"channel {c.code}: features of length {feats[c].size}, "
                                       f"model expects {model.feature_dims[c]}")
    label, probs, trust = predict_features(model, feats, args.scene, available)
    print(f"label: {LABEL_NAMES[int(label)]}", file=out)
    print("fused: " + " ".join(f"{n}={p:.4f}" for n, p in zip(LABEL_NAMES, probs)), file=out)
    print("trust: " + " ".join(f"{m.code}={w:.4f}" for m, w in trust.as_dict().items()), file=out)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise CliError(EXIT_USAGE, "--threads must be at least 1")
        return COMMANDS[args.command](args, out)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.code
    except argparse.ArgumentTypeError as e:
        print(f"trustfuse: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.VersionMismatch, errors.CorruptModel, errors.DimensionMismatch,
            errors.MissingClassifier) as e:
        print(f"model error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (errors.MissingFile, errors.ManifestMismatch, OSError, ValueError) as e:
        print(f"I/O error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
