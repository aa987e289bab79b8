"""Command-line driver for the whole pipeline.

Every subcommand is driven by one declarative TOML config plus
``--set key=value`` overrides; there are no positional arguments. Runs
print the resolved configuration hash and seed so outputs can always be
traced back to their exact inputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .corpus import join, load_events, load_key, write_corpus
from .errors import DataError, ProxkitError, UsageError
from .features import CategoryVocabulary, write_feature_csv
from .pipeline import (
    ablation_to_csv,
    importance_to_csv,
    load_model_bundle,
    predict_events,
    run_ablation,
    run_experiment,
    run_importance,
)
from .radio import fit_params
from .scoring import evaluate, format_report, read_predictions, write_predictions
from .synth import generate, split_corpus

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit 1, not 2."""

    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, metavar="FILE",
                        help="TOML experiment configuration "
                             "(defaults apply when omitted)")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override a config value; the value is parsed "
                             "as a TOML fragment (repeatable)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the configured random seed")
    parser.add_argument("--jobs", type=int, default=1, metavar="J",
                        help="worker bound for parallel stages (default 1)")
    parser.add_argument("--out", type=Path, metavar="PATH",
                        help="output path (file or directory, "
                             "command-specific default)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="proxkit",
        description="Distance-class estimation from phone sensor logs: "
                    "corpus generation, feature extraction, model training "
                    "and nDCF evaluation.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a synthetic train/dev/test corpus",
                       description="Generate the synthetic corpus described "
                                   "by the [synth] config section and write "
                                   "train/dev/test splits under the output "
                                   "directory (default: corpus/ next to the "
                                   "config file).")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="export a feature matrix as CSV",
                       description="Extract the configured feature vector "
                                   "for every event in a directory and write "
                                   "a CSV with the feature schema as header. "
                                   "The category vocabulary is fitted on "
                                   "these events.")
    _add_common(p)
    p.add_argument("--events", type=Path, required=True, metavar="DIR",
                   help="directory of event files (*.csv)")
    p.add_argument("--key", type=Path, metavar="FILE",
                   help="key table; adds a distance label column")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-radio", help="fit radio-model parameters",
                       description="Fit the [radio_fit] propagation model on "
                                   "a labeled corpus by seeded random search "
                                   "plus golden-section refinement, and write "
                                   "the fitted parameters as TOML.")
    _add_common(p)
    p.add_argument("--events", type=Path, required=True, metavar="DIR",
                   help="directory of event files (*.csv)")
    p.add_argument("--key", type=Path, required=True, metavar="FILE",
                   help="key table with true distances")
    p.set_defaults(func=cmd_fit_radio)

    p = sub.add_parser("train", help="run the full training protocol",
                       description="Run the dual-grain protocol: fit the "
                                   "vocabulary on train, grid-search each "
                                   "grain's model on train against dev, "
                                   "refit on train+dev, predict the test "
                                   "split and score it. Writes "
                                   "predictions.tsv, report.json, model.bin "
                                   "and run.log to the output directory.")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a saved model bundle",
                       description="Apply a saved model.bin to a directory "
                                   "of events and write a prediction TSV. "
                                   "The key table supplies each event's "
                                   "grain, which selects the model.")
    _add_common(p)
    p.add_argument("--model", type=Path, required=True, metavar="FILE",
                   help="model bundle written by train (model.bin)")
    p.add_argument("--events", type=Path, required=True, metavar="DIR",
                   help="directory of event files (*.csv)")
    p.add_argument("--key", type=Path, required=True, metavar="FILE",
                   help="key table naming each event's grain")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score predictions against a key table",
                       description="Compute miss/false-alarm rates and nDCF "
                                   "for the four standard conditions and "
                                   "their average.")
    _add_common(p)
    p.add_argument("--pred", type=Path, required=True, metavar="FILE",
                   help="prediction TSV (id<TAB>distance)")
    p.add_argument("--keys", type=Path, required=True, metavar="FILE",
                   help="key table with true distances")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="re-train with feature groups removed",
                       description="Re-run the full protocol once per "
                                   "configured ablation group (same seed and "
                                   "grid) and report the nDCF delta of "
                                   "removing each group.")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("importance", help="permutation feature importance",
                       description="Train via the full protocol, then "
                                   "measure each feature's importance as the "
                                   "mean test-metric increase when its "
                                   "column is shuffled.")
    _add_common(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="tabulate stored runs side by side",
                       description="Render the per-condition nDCF grid for "
                                   "one or more stored run directories as an "
                                   "aligned table, optionally as CSV and a "
                                   "bar chart.")
    _add_common(p)
    p.add_argument("--run", dest="runs", type=Path, action="append",
                   required=True, metavar="DIR",
                   help="run directory containing report.json (repeatable)")
    p.add_argument("--plot", type=Path, metavar="FILE",
                   help="write a grouped bar chart (requires matplotlib)")
    p.set_defaults(func=cmd_report)

    return parser


def _resolve(args) -> tuple[dict, str, Path]:
    doc = cfgmod.load_document(args.config, args.overrides)
    digest = cfgmod.config_hash(doc)
    base_dir = args.config.parent if args.config is not None else Path.cwd()
    return doc, digest, base_dir


def _announce(digest: str, seed: int) -> None:
    print(f"config: {digest}")
    print(f"seed: {seed}")


def cmd_gen(args) -> int:
    doc, digest, base_dir = _resolve(args)
    spec = cfgmod.generator_spec(doc, args.seed)
    _announce(digest, spec.seed)
    events, keys = generate(spec)
    splits = split_corpus(events, keys)
    out_root = args.out if args.out is not None else base_dir / "corpus"
    for name in ("train", "dev", "test"):
        evs, table = splits[name]
        write_corpus(evs, table, out_root / name / "events",
                     out_root / name / "key.tsv")
        print(f"{name}: {len(evs)} events -> {out_root / name}")
    return 0


def cmd_extract(args) -> int:
    doc, digest, base_dir = _resolve(args)
    seed = args.seed if args.seed is not None else int(doc["seed"])
    _announce(digest, seed)
    features = cfgmod.feature_config(doc)
    events = load_events(args.events)
    vocab = CategoryVocabulary.fit(ev.context for ev in events)
    labels = None
    if args.key is not None:
        keys = load_key(args.key)
        labels = {ev.id: keys[ev.id].distance for ev in events}
    out = args.out if args.out is not None else Path("features.csv")
    write_feature_csv(out, events, features, vocab, labels)
    print(f"wrote {len(events)} rows -> {out}")
    return 0


def cmd_fit_radio(args) -> int:
    doc, digest, base_dir = _resolve(args)
    model, space, base_params = cfgmod.radio_fit_settings(doc, args.seed)
    _announce(digest, space.seed)
    events = load_events(args.events)
    keys = load_key(args.key)
    dataset = join(events, keys)
    pairs = [(float(np.mean(ev.rssi())), dist)
             for ev, dist, _grain in dataset.records]
    params, loss = fit_params(pairs, model, space, base_params)
    out = args.out if args.out is not None else base_dir / "radio_fit.toml"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cfgmod.dumps_toml({
        "model": model,
        "loss": loss,
        "radio_params": params.to_dict(),
    }), encoding="utf-8")
    print(f"fitted {model} on {len(pairs)} events, "
          f"mean |d - d'| = {loss:.4f} -> {out}")
    return 0


def cmd_train(args) -> int:
    doc, digest, base_dir = _resolve(args)
    cfg = cfgmod.experiment_config(doc, base_dir, args.seed, args.out)
    _announce(digest, cfg.seed)
    result = run_experiment(cfg, run_info={"command": "train",
                                           "config": digest,
                                           "seed": cfg.seed})
    print(format_report(result.report, label="test"))
    print(f"average nDCF: {result.report.average_ndcf:.3f}")
    print(f"artifacts -> {cfg.out_dir}")
    return 0


def cmd_predict(args) -> int:
    doc, digest, base_dir = _resolve(args)
    seed = args.seed if args.seed is not None else int(doc["seed"])
    _announce(digest, seed)
    bundle = load_model_bundle(args.model)
    events = load_events(args.events)
    keys = load_key(args.key)
    predictions = predict_events(bundle, events, keys)
    out = args.out if args.out is not None else Path("predictions.tsv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_predictions(predictions), encoding="utf-8")
    print(f"predicted {len(predictions)} events -> {out}")
    return 0


def cmd_score(args) -> int:
    doc, digest, base_dir = _resolve(args)
    seed = args.seed if args.seed is not None else int(doc["seed"])
    _announce(digest, seed)
    weights = cfgmod.cost_weights(doc)
    if not args.pred.is_file():
        raise UsageError(f"prediction file not found: {args.pred}")
    predictions = read_predictions(args.pred.read_text(encoding="utf-8"))
    keys = load_key(args.keys)
    report = evaluate(predictions, keys, weights)
    print(format_report(report))
    print(f"average nDCF: {report.average_ndcf:.3f}")
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report.to_json(), encoding="utf-8")
        print(f"report -> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    doc, digest, base_dir = _resolve(args)
    cfg = cfgmod.experiment_config(doc, base_dir, args.seed)
    _announce(digest, cfg.seed)
    result = run_ablation(cfg, jobs=args.jobs)
    out = args.out if args.out is not None else cfg.out_dir / "ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ablation_to_csv(result), encoding="utf-8")
    width = max(len("baseline"), *(len(g) for g in result.groups))
    print(f"{'baseline'.ljust(width)}  {result.baseline_score:.3f}")
    for group in result.groups:
        print(f"{group.ljust(width)}  {result.scores[group]:.3f}  "
              f"delta {result.deltas[group]:+.3f}")
    print(f"ablation table -> {out}")
    return 0


def cmd_importance(args) -> int:
    doc, digest, base_dir = _resolve(args)
    cfg = cfgmod.experiment_config(doc, base_dir, args.seed)
    _announce(digest, cfg.seed)
    repeats = int(doc["importance"]["repeats"])
    _result, per_grain = run_importance(cfg, repeats)
    out = args.out if args.out is not None else cfg.out_dir / "importance.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(importance_to_csv(per_grain), encoding="utf-8")
    for grain in sorted(per_grain):
        ranked = sorted(per_grain[grain].items(),
                        key=lambda kv: (-kv[1], kv[0]))[:10]
        print(f"top features ({grain}):")
        for name, imp in ranked:
            print(f"  {name}: {imp:+.4f}")
    print(f"importance table -> {out}")
    return 0


def cmd_report(args) -> int:
    doc, digest, base_dir = _resolve(args)
    seed = args.seed if args.seed is not None else int(doc["seed"])
    _announce(digest, seed)
    rows = []
    for run_dir in args.runs:
        report_path = run_dir / "report.json"
        if not report_path.is_file():
            raise UsageError(f"no report.json in run directory: {run_dir}")
        body = json.loads(report_path.read_text(encoding="utf-8"))
        scores = {f"{c['grain']}_{c['threshold_d']}": c["ndcf"]
                  for c in body["conditions"]}
        rows.append((run_dir.name, scores, body["average_ndcf"]))

    heads = sorted({k for _, scores, _ in rows for k in scores}) + ["average"]
    name_w = max(len("run"), *(len(name) for name, _, _ in rows))
    col_w = [max(len(h), 5) for h in heads]
    print(" | ".join(["run".ljust(name_w)]
                     + [h.rjust(w) for h, w in zip(heads, col_w)]))
    print("-+-".join(["-" * name_w] + ["-" * w for w in col_w]))
    csv_lines = ["run," + ",".join(heads)]
    for name, scores, average in rows:
        cells = [f"{scores.get(h, float('nan')):.3f}" for h in heads[:-1]]
        cells.append(f"{average:.3f}")
        print(" | ".join([name.ljust(name_w)]
                         + [c.rjust(w) for c, w in zip(cells, col_w)]))
        csv_lines.append(name + "," + ",".join(cells))
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        print(f"comparison CSV -> {args.out}")
    if args.plot is not None:
        _write_plot(rows, heads, args.plot)
        print(f"chart -> {args.plot}")
    return 0


def _write_plot(rows, heads, path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise UsageError("plotting requires matplotlib (install the "
                         "'plot' extra)")
    x = np.arange(len(heads))
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, (name, scores, average) in enumerate(rows):
        vals = [scores.get(h, float("nan")) for h in heads[:-1]] + [average]
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(heads, rotation=20, ha="right")
    ax.set_ylabel("nDCF")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help exits 0; argparse internals
        return 0 if e.code in (None, 0) else 1
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr)
    try:
        return int(args.func(args) or 0)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ProxkitError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - last-resort exit-code mapping
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
