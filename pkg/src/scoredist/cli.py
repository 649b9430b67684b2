"""Command-line entry point: ``scoredist <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio
from .divergence import MD_COLUMNS, DivergenceKind
from .evaluation import md_matrix, md_report, parse_regimes, report_tables, subjectiveness_report
from .gradcheck import DIVERGENCE_TOL, END_TO_END_TOL, check_divergences, check_end_to_end
from .predictor import PredictorConfig, init_params, predict
from .reliability import ReliabilityConfig
from .trainer import DivergedError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scoredist")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _print_config(name: str, config: dict) -> None:
    print(f"# {name} config: {json.dumps(config, sort_keys=True)}", file=sys.stderr)


def _write(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _md_table(rows: list[tuple[str, list[float]]], columns=MD_COLUMNS) -> str:
    lines = ["\t".join(["model"] + [c.name for c in columns])]
    lines += ["\t".join([label] + [f"{v:.6f}" for v in values]) for label, values in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.population:
        seed = 0 if args.seed is None else args.seed
        _print_config("gen", {"population": args.population, "seed": seed})
        counts = dataio.generate_population_counts(args.population, seed)
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "population.txt")
        dataio.write_ava_metadata(path, counts)
        print(f"wrote {len(counts)} records to {path}")
        return EXIT_OK

    fields = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            fields.update(json.load(fh))
    for name in ("n_samples", "feature_dim", "fraction_skewed", "label_noise", "corrupt_fraction", "seed"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    spec = dataio.SyntheticSpec.from_dict(fields)
    _print_config("gen", spec.to_dict())
    train_set, test_set = dataio.generate_synthetic(spec)
    dataio.save_dataset(args.out, train_set, test_set)
    _write(os.path.join(args.out, "spec.json"), json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {args.out}")
    return EXIT_OK


def _looks_like_ava(path: str) -> bool:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    dataio.parse_ava_line(line)
                    return True
                except dataio.DataFormatError:
                    return False
    return True


def cmd_analyze(args) -> int:
    fmt = args.format
    if fmt == "auto":
        fmt = "samples" if os.path.isdir(args.data) or not _looks_like_ava(args.data) else "ava"
    _print_config("analyze", {
        "data": args.data, "format": fmt, "mean_bin_width": args.mean_bin_width,
        "std_bin_width": args.std_bin_width, "skew_bin_width": args.skew_bin_width,
    })
    if fmt == "ava":
        errors: list = []
        hists, empty = [], 0
        for rec in dataio.iter_ava_metadata(args.data, strict=args.strict, errors=errors):
            if rec.num_ratings == 0:
                empty += 1
                continue
            hists.append(dataio.histogram_from_ratings(dataio.RatingSet(rec.rating_counts)))
        for lineno, msg in errors[:20]:
            print(f"warning: line {lineno}: {msg}", file=sys.stderr)
        if errors:
            print(f"warning: {len(errors)} malformed lines skipped", file=sys.stderr)
        if empty:
            print(f"warning: {empty} records without votes skipped", file=sys.stderr)
    else:
        if os.path.isdir(args.data):
            train_set, test_set = dataio.load_dataset(args.data)
            samples = train_set + test_set
        else:
            samples = dataio.read_samples(args.data)
        hists = [s.target for s in samples]
    if not hists:
        raise dataio.DataFormatError("no usable histograms in input")

    report = subjectiveness_report(hists, args.mean_bin_width, args.std_bin_width, args.skew_bin_width)
    for stem, text in report_tables(report).items():
        _write(os.path.join(args.out, f"{stem}.tsv"), text)
    print(f"analyzed {report.n_valid} histograms ({report.n_degenerate} degenerate) -> {args.out}")
    print("mean_bin\tmedian_skewness")
    for b, s in sorted(report.skewness_by_mean.items()):
        print(f"{report.bin_label(report.mean_edges, b)}\t{s.median:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    kinds = [DivergenceKind.parse(k) for k in (args.kinds or [k.value for k in DivergenceKind])]
    _print_config("gradcheck", {"kinds": [k.value for k in kinds], "trials": args.trials, "seed": args.seed})
    div = check_divergences(kinds, args.trials, args.seed)
    e2e = check_end_to_end(kinds, args.trials, args.seed + 1)
    ok = True
    print("kind\tdivergence_max_rel_err\tend_to_end_max_rel_err\tstatus")
    for k in kinds:
        passed = div[k] < DIVERGENCE_TOL and e2e[k] < END_TO_END_TOL
        ok &= passed
        print(f"{k.value}\t{div[k]:.3e}\t{e2e[k]:.3e}\t{'ok' if passed else 'FAIL'}")
    print(f"worst divergence error {max(div.values()):.3e} (tol {DIVERGENCE_TOL:g}); "
          f"worst end-to-end error {max(e2e.values()):.3e} (tol {END_TO_END_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def _train_config(args, loss: str, mode: str, lam: float) -> TrainConfig:
    return TrainConfig(
        loss_kind=loss,
        reliability_mode=mode,
        lam=lam,
        batch_size=args.batch_size,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        base_lr=args.lr,
        lr_gamma=args.lr_gamma,
        lr_step_iters=args.lr_step,
        max_iters=args.max_iters,
        seed=args.seed,
    )


def _predictor_config(args, input_dim: int) -> PredictorConfig:
    return PredictorConfig(input_dim=input_dim, hidden_dims=tuple(args.hidden), seed=args.seed)


def cmd_train(args) -> int:
    train_set, test_set = dataio.load_dataset(args.data)
    if not train_set:
        raise dataio.DataFormatError("training split is empty")
    mode = {"count": "rating_count"}.get(args.rs, args.rs)
    cfg = _train_config(args, args.loss, mode, args.lam)
    predictor = _predictor_config(args, train_set[0].features.size)
    rel = ReliabilityConfig(percentile=args.th_percentile, lam=args.lam, epsilon=args.epsilon)
    _print_config("train", {"train": cfg.to_dict(), "predictor": predictor.to_dict(),
                            "reliability": {"percentile": rel.percentile, "epsilon": rel.epsilon}})

    try:
        report = train(train_set, cfg, predictor=predictor, reliability=rel if mode != "none" else None)
    except DivergedError as exc:
        if exc.report is not None:
            os.makedirs(args.out, exist_ok=True)
            _write(os.path.join(args.out, "loss_log.tsv"),
                   "iteration\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(exc.report.losses)))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    metrics = {"final_loss": report.losses[-1] if report.losses else None}
    if test_set:
        preds = predict(report.params, np.stack([s.features for s in test_set]))
        md = md_report(list(preds), [s.target for s in test_set])
        metrics["test_md"] = {k.value: v for k, v in md.values.items()}
    manifest = {
        "train_config": cfg.to_dict(),
        "predictor_config": predictor.to_dict(),
        "reliability": None if report.reliability is None else {
            "epsilon": report.reliability.epsilon,
            "percentile": report.reliability.percentile,
            "threshold": report.reliability.threshold,
            "count_threshold": report.reliability.count_threshold,
            "reference_count": report.reliability.reference_count,
            "lam": report.reliability.lam,
        },
        "seed": cfg.seed,
        "dataset_digest": dataio.dataset_digest(train_set),
        "skipped_samples": report.skipped,
        "seconds": report.seconds,
        "metrics": metrics,
    }
    os.makedirs(args.out, exist_ok=True)
    dataio.save_checkpoint(os.path.join(args.out, "checkpoint.txt"), report.params, manifest)
    _write(os.path.join(args.out, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write(os.path.join(args.out, "loss_log.tsv"),
           "iteration\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(report.losses)))
    print(f"trained {cfg.max_iters} iterations in {report.seconds:.2f}s, skipped {report.skipped} samples")
    if "test_md" in metrics:
        print(_md_table([(f"test ({len(test_set)})", md.row())]), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    train_set, test_set = dataio.load_dataset(args.data)
    samples = test_set if args.split == "test" else train_set
    if not samples:
        raise dataio.DataFormatError(f"{args.split} split is empty")
    _print_config("eval", {"checkpoint": args.checkpoint, "data": args.data,
                           "split": args.split, "echo_truth": args.echo_truth})
    truths = [s.target for s in samples]
    if args.echo_truth:
        preds = [s.target.probs for s in samples]
        label = "echo-truth"
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint unless --echo-truth is given")
        params = dataio.load_checkpoint(args.checkpoint)
        if params.config.input_dim != samples[0].features.size:
            raise dataio.CheckpointError(
                f"shape mismatch: checkpoint expects {params.config.input_dim} features, "
                f"data has {samples[0].features.size}")
        preds = list(predict(params, np.stack([s.features for s in samples])))
        label = os.path.basename(args.checkpoint)
    md = md_report(preds, truths)
    table = _md_table([(label, md.row())])
    if args.out:
        _write(args.out, table)
    print(f"n\t{md.n}")
    print(table, end="")
    return EXIT_OK


def cmd_matrix(args) -> int:
    train_set, test_set = dataio.load_dataset(args.data)
    if not train_set or not test_set:
        raise dataio.DataFormatError("matrix needs nonempty train and test splits")
    regimes = parse_regimes(args.regimes)
    cfg = _train_config(args, "cjs", "none", 1.0)
    predictor = _predictor_config(args, train_set[0].features.size)
    _print_config("matrix", {"regimes": [r.label for r in regimes], "train": cfg.to_dict(),
                             "predictor": predictor.to_dict(), "jobs": args.jobs})
    matrix = md_matrix(train_set, test_set, regimes, cfg, predictor, jobs=args.jobs)
    text = matrix.to_tsv()
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return EXIT_NUMERIC if matrix.failures else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_training_flags(p) -> None:
    d = TrainConfig()
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.base_lr)
    p.add_argument("--lr-gamma", type=float, default=d.lr_gamma)
    p.add_argument("--lr-step", type=int, default=d.lr_step_iters)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--hidden", type=int, nargs="+", default=[64])
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scoredist", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic benchmark or rating population")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--fraction-skewed", type=float)
    p.add_argument("--label-noise", type=float)
    p.add_argument("--corrupt-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int, metavar="N",
                   help="write N AVA-format records with mean-dependent skew instead")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("analyze", help="rating-shape statistics tables")
    p.add_argument("--data", required=True, help="AVA metadata file, sample file or dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["auto", "ava", "samples"], default="auto")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed AVA line")
    p.add_argument("--mean-bin-width", type=float, default=1.0)
    p.add_argument("--std-bin-width", type=float, default=0.25)
    p.add_argument("--skew-bin-width", type=float, default=0.5)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--kinds", nargs="+", choices=[k.value for k in DivergenceKind])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a predictor")
    p.add_argument("--data", required=True, help="dataset directory with train.txt/test.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=[k.value for k in DivergenceKind], default="cjs")
    p.add_argument("--rs", choices=["none", "kurtosis", "count", "blend"], default="none")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--th-percentile", type=float, default=0.90,
                   help="share of training histograms kept below the threshold (0.95/0.80/0.70 also tried)")
    p.add_argument("--epsilon", type=float, default=1e-6)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean divergences of a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--echo-truth", action="store_true",
                   help="score the ground truth against itself (pipeline check)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="train several regimes and tabulate mean divergences")
    p.add_argument("--data", required=True)
    p.add_argument("--regimes", nargs="+", required=True,
                   help="kind[:none|kurtosis|count|blend[:lam,...]] items, or 'all'")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    _add_training_flags(p)
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, dataio.DataFormatError, dataio.CheckpointError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
