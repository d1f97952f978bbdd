"""Command-line pipeline: gen-synthetic, extract, train, predict, mix,
probe-train and eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .attributes import NAMED_MIXTURES, MixtureSpec, compose_mixture, named_mixture, parse_components, predict_attributes
from .corpus import SPLITS
from .dataio import (
    FORMAT_VERSION,
    FeatureTable,
    Manifest,
    ManifestRow,
    ModelBundle,
    load_bundle,
    load_manifest,
    provenance,
    read_features,
    read_wav,
    save_bundle,
    write_csv,
    write_features,
    write_manifest,
)
from .emotions import DEFAULT_EMOTIONS, canonical
from .errors import EmoAttrError, InsufficientData, InvalidConfig, NumericalError
from .evaluation import (
    DEFAULT_LEVELS,
    ProbeConfig,
    SyntheticCorpusConfig,
    generate_synthetic,
    probability_curve,
    ranking_report,
    spearman_rho,
    train_probe,
)
from .features import FEATURE_DIM, FrameParams, extract_features
from .ranking import DEFAULT_MAX_ORDERED, DEFAULT_MAX_UNORDERED, SolverConfig, train_pair_models

log = logging.getLogger("emoattr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _emotion_list(text: str) -> tuple:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if len(set(n.lower() for n in names)) != len(names):
        raise argparse.ArgumentTypeError(f"duplicate emotion in {text!r}")
    return tuple(n[:1].upper() + n[1:] for n in names)


def _levels(text: str) -> tuple:
    try:
        values = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("need at least one level")
    return values


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _cap(text: str):
    if text.lower() in ("none", "all", "0"):
        return None if text.lower() != "0" else 0
    return int(text)


def _write_config(path: Path, command: str, args: argparse.Namespace, **extra):
    cfg = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in vars(args).items()
        if k not in ("func", "config") and not callable(v)
    }
    doc = {"format_version": FORMAT_VERSION, "emoattr_version": __version__, "command": command, "args": cfg}
    doc.update(extra)
    path.write_text(json.dumps(doc, indent=1, default=str) + "\n", encoding="utf-8")


def _sidecar(out: Path) -> Path:
    return out.with_name(out.name + ".config.json")


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc.strerror or exc}") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


def _ensure_parent(path: Path) -> Path:
    _ensure_dir(path.parent if str(path.parent) else Path("."))
    return path


def _load_labeled(args):
    manifest = load_manifest(args.manifest, args.emotions)
    table = read_features(args.features)
    return manifest, manifest.labeled(table)


# --- subcommands -------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    out = _ensure_dir(Path(args.out))
    cfg = SyntheticCorpusConfig(
        emotions=args.emotions,
        n_train=args.n_train,
        n_test=args.n_test,
        n_eval=args.n_eval,
        separation=args.separation,
        seed=args.seed,
    )
    data = generate_synthetic(cfg)
    rows = [ManifestRow(uid, "", "synthetic", emo, split) for uid, emo, split in zip(data.ids, data.labels, data.splits)]
    try:
        write_manifest(out / "manifest.csv", Manifest(rows, cfg.emotions))
        write_features(out / "features.bin", FeatureTable(data.features))
        _write_config(out / "gen-synthetic.config.json", "gen-synthetic", args, corpus=asdict(cfg))
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror or exc}") from None
    print(f"wrote {len(rows)} rows x {cfg.dim} features to {out}")
    return EXIT_OK


def _extract_one(job):
    path, params = job
    try:
        return extract_features(read_wav(path), params), None
    except EmoAttrError as exc:
        return None, str(exc)


def cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest, args.emotions)
    params = FrameParams(args.window_ms, args.hop_ms, args.window_fn)
    base = Path(args.manifest).resolve().parent
    jobs = []
    for r in manifest.rows:
        if not r.path:
            raise DataError(f"manifest row {r.utterance_id} has no audio path")
        p = Path(r.path)
        jobs.append((str(p if p.is_absolute() else base / p), params))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]

    failed = [(r.utterance_id, err) for r, (_, err) in zip(manifest.rows, results) if err is not None]
    for uid, err in failed:
        print(f"error: {uid}: {err}", file=sys.stderr)
    if failed and not args.keep_going:
        raise DataError(f"{len(failed)} utterance(s) failed: {', '.join(u for u, _ in failed)}")

    kept = [(r, vec) for r, (vec, err) in zip(manifest.rows, results) if err is None]
    if not kept:
        raise DataError("no utterance could be extracted")
    out = _ensure_parent(Path(args.out))
    write_features(out, FeatureTable(np.vstack([v for _, v in kept])))
    extra = {}
    if failed:
        kept_manifest = out.with_name(out.stem + ".manifest.csv")
        write_manifest(kept_manifest, Manifest([r for r, _ in kept], manifest.emotions))
        extra["kept_manifest"] = str(kept_manifest)
        print(
            f"warning: skipped {len(failed)} utterance(s): {', '.join(u for u, _ in failed)}; "
            f"row-aligned manifest written to {kept_manifest}",
            file=sys.stderr,
        )
    _write_config(_sidecar(out), "extract", args, frame_params=asdict(params), skipped=[u for u, _ in failed], **extra)
    print(f"wrote {len(kept)} x {FEATURE_DIM} features to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _, data = _load_labeled(args)
    train = data.subset("train")
    present = train.emotions_present()
    if len(present) < 2:
        raise InsufficientData(
            f"train split contains {len(present)} emotion(s) ({', '.join(present) or 'none'}); need at least 2"
        )
    config = SolverConfig(
        C=args.C,
        grad_tol=args.grad_tol,
        max_newton_iters=args.max_iter,
        standardize=not args.no_standardize,
        seed=args.seed,
    )
    models = train_pair_models(train, args.emotions, config, args.max_ordered, args.max_unordered, jobs=args.jobs)
    for m in models:
        print(
            f"{m.pair.high:>9s} > {m.pair.low:<9s} converged={m.converged!s:<5} "
            f"iterations={m.iterations:<3d} objective={m.final_objective:.6g}"
        )
    prov = provenance(command="train", solver=asdict(config), seed=args.seed,
                      max_ordered=args.max_ordered, max_unordered=args.max_unordered,
                      manifest=str(args.manifest), features=str(args.features))
    out = _ensure_parent(Path(args.out))
    save_bundle(out, ModelBundle(tuple(args.emotions), models, None, prov))
    _write_config(_sidecar(out), "train", args, solver=asdict(config))
    bad = [m for m in models if not m.converged]
    if bad:
        names = ", ".join(str(m.pair) for m in bad)
        print(f"warning: not converged: {names}", file=sys.stderr)
        if args.require_converged:
            raise NumericalError(f"pair model(s) did not converge: {names}")
    print(f"wrote {len(models)} models to {out}")
    return EXIT_OK


def cmd_probe_train(args) -> int:
    bundle = load_bundle(args.models)
    _, data = _load_labeled(args)
    cfg = ProbeConfig(args.lr, args.epochs, args.l2, args.seed, not args.no_standardize)
    probe = train_probe(data.subset("train"), cfg, class_order=bundle.emotions)
    bundle.probe = probe
    bundle.provenance["probe"] = {"config": asdict(cfg), "created": provenance()["created"]}
    out = _ensure_parent(Path(args.out or args.models))
    save_bundle(out, bundle)
    _write_config(_sidecar(out), "probe-train", args, probe=asdict(cfg))
    status = "DIVERGED" if probe.diverged else "ok"
    print(f"probe trained ({status}); final loss {probe.loss_history[-1]:.6g}; written to {out}")
    if probe.diverged:
        print("warning: probe loss increased during training; lower --lr", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    bundle = load_bundle(args.models)
    _, data = _load_labeled(args)
    target = canonical(args.input_emotion, bundle.emotions)
    subset = data.subset(args.split)
    if not args.all_rows:
        subset = subset.subset(emotions=[target])
    if len(subset) == 0:
        raise InsufficientData(f"no {args.split} rows{'' if args.all_rows else f' labeled {target}'} to predict")
    others = [e for e in bundle.emotions if e != target]
    rows = []
    for uid, label, x in zip(subset.ids, subset.labels, subset.features):
        vec = predict_attributes(x, target, bundle.models, bundle.emotions)
        rows.append([uid, label, target, *vec.values(others)])
    header = ["utterance_id", "emotion", "input_emotion", *others]
    out = _ensure_parent(Path(args.out))
    write_csv(out, header, rows)
    _write_config(_sidecar(out), "predict", args)
    print(f"wrote {len(rows)} attribute vectors to {out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    emotions = args.emotions
    specs = []
    if args.name:
        if args.base or args.with_:
            raise UsageError("use either --name or --base/--with, not both")
        levels = args.levels or DEFAULT_LEVELS
        for p in levels:
            specs.append((args.name.lower(), p, named_mixture(args.name, p)))
    elif args.base:
        base = canonical(args.base, emotions)
        comps = parse_components(args.with_ or [], emotions)
        if args.levels:
            if len(comps) != 1:
                raise UsageError("--levels with --base needs exactly one --with emotion")
            (mixed,) = comps
            specs = [("custom", p, MixtureSpec(base, {mixed: p})) for p in args.levels]
        else:
            specs = [("custom", max(comps.values(), default=0.0), MixtureSpec(base, comps))]
    else:
        raise UsageError("mix needs --name or --base")

    rows = []
    for name, level, spec in specs:
        vec = compose_mixture(spec, emotions)
        rows.append([name, level, spec.base, *(0.0 if e == spec.base else vec.entries[e] for e in emotions)])
    header = ["mixture", "level", "base", *emotions]
    if args.out in (None, "-"):
        w = __import__("csv").writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        out = _ensure_parent(Path(args.out))
        write_csv(out, header, rows)
        _write_config(_sidecar(out), "mix", args)
        print(f"wrote {len(rows)} attribute vectors to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_bundle(args.models)
    if args.curves and bundle.probe is None:
        raise DataError(f"bundle {args.models} has no probe classifier; run `emoattr probe-train` first")
    _, data = _load_labeled(args)
    out = _ensure_dir(Path(args.out))
    test = data.subset(args.split)
    report = ranking_report(bundle.models, test)
    write_csv(
        out / "ranking_report.csv",
        ["high", "low", "accuracy", "n_pairs", "split"],
        ([r.high, r.low, r.accuracy, r.n_pairs, args.split] for r in report.pairs),
    )
    write_csv(
        out / "attribute_distribution.csv",
        ["high", "low", "emotion", "mean_normalized_score", "std_normalized_score"],
        ([h, l, e, m, s] for (h, l, e), (m, s) in sorted(report.distributions.items())),
    )
    for r in report.pairs:
        print(f"{r.high:>9s} > {r.low:<9s} accuracy={r.accuracy:.4f} ({r.n_pairs} pairs)")
    print(f"minimum pairwise ordering accuracy: {report.min_accuracy():.4f}")

    summary = []
    if args.curves:
        train = data.subset("train")
        evalset = data.subset("eval")
        for name, (base, mixed) in NAMED_MIXTURES.items():
            if base not in bundle.emotions or mixed not in bundle.emotions:
                continue
            curve = probability_curve(bundle.probe, base, mixed, args.levels, evalset, train.centroid(mixed))
            write_csv(out / f"curve_{name.lower()}.csv", ["level", "emotion", "mean_probability", "n"], curve.rows())
            rho = spearman_rho(curve.curve(mixed))
            argmax_ok = all(curve.class_order[i] == base for i in curve.probabilities.argmax(axis=1))
            summary.append([name, base, mixed, rho, argmax_ok])
            print(f"{name}: {mixed} probability {np.round(curve.curve(mixed), 3).tolist()} "
                  f"spearman={rho:.3f} {base} argmax at every level={argmax_ok}")
        write_csv(out / "curves_summary.csv", ["mixture", "base", "mixed", "spearman_rho", "base_argmax_all_levels"], summary)
    _write_config(out / "eval.config.json", "eval", args, models_provenance=bundle.provenance)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with default option values (flags win)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=_positive_int, default=1)
    common.add_argument("--emotions", type=_emotion_list, default=DEFAULT_EMOTIONS,
                        help="comma-separated emotion set (default: %(default)s)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--manifest", required=True)
    data.add_argument("--features", required=True)

    p = _Parser(prog="emoattr", description="Emotion attribute ranking pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic Gaussian corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--separation", type=float, default=5.0)
    g.add_argument("--n-train", type=_positive_int, default=300)
    g.add_argument("--n-test", type=_positive_int, default=30)
    g.add_argument("--n-eval", type=_positive_int, default=20)
    g.set_defaults(func=cmd_gen_synthetic)

    e = sub.add_parser("extract", parents=[common], help="extract 384-dim features from WAV files")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="output feature file")
    e.add_argument("--window-ms", type=float, default=25.0)
    e.add_argument("--hop-ms", type=float, default=10.0)
    e.add_argument("--window-fn", default="hamming")
    e.add_argument("--keep-going", action="store_true", help="skip unreadable utterances")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", parents=[common, data], help="train all pairwise ranking models")
    t.add_argument("--out", "--models", dest="out", required=True, help="output model bundle (JSON)")
    t.add_argument("--C", type=float, default=SolverConfig.C)
    t.add_argument("--grad-tol", type=float, default=SolverConfig.grad_tol)
    t.add_argument("--max-iter", type=_positive_int, default=SolverConfig.max_newton_iters)
    t.add_argument("--no-standardize", action="store_true")
    t.add_argument("--max-ordered", type=_cap, default=DEFAULT_MAX_ORDERED, help="cap, or 'none'")
    t.add_argument("--max-unordered", type=_cap, default=DEFAULT_MAX_UNORDERED, help="cap, or 'none'")
    t.add_argument("--require-converged", action="store_true", help="exit 3 if any model fails to converge")
    t.set_defaults(func=cmd_train)

    pt = sub.add_parser("probe-train", parents=[common, data], help="train the softmax probe into a bundle")
    pt.add_argument("--models", required=True, help="model bundle to extend")
    pt.add_argument("--out", help="write the extended bundle here instead of in place")
    pt.add_argument("--lr", type=float, default=ProbeConfig.learning_rate)
    pt.add_argument("--epochs", type=_positive_int, default=ProbeConfig.epochs)
    pt.add_argument("--l2", type=float, default=ProbeConfig.l2)
    pt.add_argument("--no-standardize", action="store_true")
    pt.set_defaults(func=cmd_probe_train)

    pr = sub.add_parser("predict", parents=[common, data], help="predict attribute vectors")
    pr.add_argument("--models", required=True)
    pr.add_argument("--input-emotion", required=True)
    pr.add_argument("--split", choices=SPLITS, default="eval")
    pr.add_argument("--all-rows", action="store_true", help="use every row of the split, not only input-emotion rows")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    m = sub.add_parser("mix", parents=[common], help="compose manual mixture attribute vectors")
    m.add_argument("--name", choices=[n.lower() for n in NAMED_MIXTURES], type=str.lower)
    m.add_argument("--base")
    m.add_argument("--with", dest="with_", action="append", metavar="EMOTION=P")
    m.add_argument("--levels", type=_levels)
    m.add_argument("--out", help="output CSV (default: stdout)")
    m.set_defaults(func=cmd_mix)

    ev = sub.add_parser("eval", parents=[common, data], help="ranking report and probability curves")
    ev.add_argument("--models", required=True)
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--split", choices=SPLITS, default="test", help="split for the ranking report")
    ev.add_argument("--curves", action="store_true", help="also write mixture probability curves (needs a probe)")
    ev.add_argument("--levels", type=_levels, default=DEFAULT_LEVELS)
    ev.set_defaults(func=cmd_eval)
    return p


def _load_config_file(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None


def _config_defaults(parser, argv) -> None:
    """Install values from ``--config`` as subcommand defaults so flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in rest if tok in choices), None)
    if command is None:
        return
    table = _load_config_file(known.config)
    values = {k: v for k, v in table.items() if not isinstance(v, dict)}
    values.update(table.get(command, {}))
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest == "with":
            dest = "with_"
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"config file {known.config}: unknown option {key!r} for {command}")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value) if dest in ("emotions", "levels") else value
        action = actions[dest]
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config file {known.config}: bad value for {key!r}: {exc}") from None
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)


def _parse(parser, argv):
    _config_defaults(parser, sys.argv[1:] if argv is None else argv)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfig as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EmoAttrError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


def main_entry():  # console script
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
