"""Single command-line entry point for the whole harness.

    adscreen {vocab|train-eval|simulate|geo|serve|validate-ruleset} ...

Every run writes its outputs under --out together with a ``manifest.json``
(subcommand, config hash, seed, version, timestamps, output paths).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .funnel import FUNNEL_CSV_HEADER, funnel_report


def _fail(message: str) -> "NoReturn":  # noqa: F821
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(1)


def _hash_file(path: Path | None) -> str:
    if path is None or not path.exists():
        return ""
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, *, seed=None, config_path=None,
                    started=None, outputs=()):
    manifest = {
        "subcommand": subcommand,
        "config_hash": _hash_file(Path(config_path)) if config_path else "",
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(out_dir / "manifest.json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_vocab(args) -> int:
    from . import textfeat

    started = _now()
    for p in (args.logs, args.profiles):
        if not Path(p).exists():
            _fail(f"no such file: {p}")
    stopwords_path = Path(args.stopwords) if args.stopwords else textfeat.default_stopwords_path()
    if not stopwords_path.exists():
        _fail(f"no such file: {stopwords_path}")
    try:
        histories = textfeat.load_query_logs(args.logs, args.profiles)
        if not histories:
            _fail("no users in the query log")
        stopwords = textfeat.load_stopwords(stopwords_path)
        vocab = textfeat.build_vocabulary(histories, stopwords)
    except ValueError as e:
        _fail(str(e))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_path = out_dir / "vocabulary.json"
    vocab_path.write_text(
        json.dumps(
            {
                "built_from_n_users": vocab.built_from_n_users,
                "terms": [
                    {"term": t, "user_prevalence": p}
                    for t, p in zip(vocab.terms, vocab.prevalences)
                ],
            },
            indent=2,
        )
    )
    _write_manifest(out_dir, "vocab", started=started, outputs=[vocab_path])
    print(f"wrote {vocab_path} ({len(vocab.terms)} terms from {vocab.built_from_n_users} users)")
    return 0


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_train_eval(args) -> int:
    import numpy as np

    from . import forest, textfeat

    started = _now()
    try:
        histories = textfeat.load_query_logs(args.logs, args.profiles)
        histories = textfeat.filter_eligible(histories)
        labeled = [h for h in histories if h.label in ("HIGH", "LOW")]
        if len(labeled) < 3:
            _fail(f"need at least 3 eligible labeled users, got {len(labeled)}")
        lex = textfeat.SymptomLexicon.from_file(args.lexicon or textfeat.default_lexicon_path())
        stopwords = textfeat.load_stopwords(args.stopwords or textfeat.default_stopwords_path())
        vocab = textfeat.build_vocabulary(labeled, stopwords)
        names = textfeat.feature_names(lex, vocab)
        X = np.array([textfeat.to_dense(textfeat.vectorize(h, lex, vocab), lex, vocab) for h in labeled])
        y = np.array([1 if h.label == "HIGH" else 0 for h in labeled])
        cfg = forest.ForestConfig(n_trees=args.trees, seed=args.seed)
        report = forest.loo_evaluate(X, y, cfg, names)
        model = forest.train(X, y, cfg, names)
        imp = forest.importance(model, X, y, seed=args.seed)
    except ValueError as e:
        _fail(str(e))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eval_path = out_dir / "eval.csv"
    _write_csv(
        eval_path,
        ["sample", "score", "label"],
        [(i, f"{s:.6f}", l) for i, (s, l) in enumerate(zip(report.scores, report.labels))],
    )
    roc_path = out_dir / "roc.csv"
    _write_csv(roc_path, ["fpr", "tpr"], [(f"{a:.6f}", f"{b:.6f}") for a, b in report.roc_points])
    imp_path = out_dir / "importance.csv"
    _write_csv(
        imp_path,
        ["feature", "mean_error_increase", "sd_over_trees", "score", "degenerate"],
        [
            (n, f"{m:.6f}", f"{s:.6f}", f"{sc:.6f}", int(d))
            for n, m, s, sc, d in zip(
                imp.feature_names, imp.mean_error_increase, imp.sd_over_trees, imp.score, imp.degenerate
            )
        ],
    )
    model_path = out_dir / "model.json"
    model.save(model_path)
    summary_path = out_dir / "summary.json"
    summary_path.write_text(
        json.dumps({"auc": report.auc, "n": len(report.labels), "skipped_folds": report.skipped_folds,
                    "per_class_counts": report.per_class_counts}, indent=2)
    )
    _write_manifest(out_dir, "train-eval", seed=args.seed, started=started,
                    outputs=[eval_path, roc_path, imp_path, model_path, summary_path])
    print(f"AUC {report.auc:.4f} over {len(report.labels)} samples "
          f"({report.skipped_folds} folds skipped)")
    return 0


def _svg_line_chart(xs, ys, title: str, width=640, height=360, margin=48) -> str:
    if not xs:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>'
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(max(ys), 1e-9)
    sx = lambda x: margin + (x - x0) / max(x1 - x0, 1e-9) * (width - 2 * margin)
    sy = lambda y: height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)
    points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="100%" height="100%" fill="white"/>'
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>'
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>'
        f'<text x="{margin}" y="{height - margin + 16}" font-size="10">{x0:g}</text>'
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" font-size="10">{x1:g}</text>'
        f'<text x="{margin - 4}" y="{margin}" text-anchor="end" font-size="10">{y1:.3f}</text>'
        f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end" font-size="10">0</text>'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{points}"/>'
        "</svg>"
    )


def cmd_simulate(args) -> int:
    from . import adsim
    from .rules import load_ruleset

    started = _now()
    config_path = Path(args.config) if args.config else adsim.default_paperlike_config_path()
    if not config_path.exists():
        _fail(f"no such file: {config_path}")
    try:
        cfg = adsim.SimConfig.from_file(config_path)
        if args.learner:
            spec = {"random": "random_baseline", "logistic": "online_logistic",
                    "thompson": "thompson_beta_segments"}.get(args.learner, args.learner)
            cfg = adsim.SimConfig(
                population=cfg.population,
                learner=adsim.LearnerSpec(
                    kind=spec, epsilon=cfg.learner.epsilon,
                    learning_rate=cfg.learner.learning_rate,
                ),
                campaign=cfg.campaign, days=cfg.days, cancer_type=cfg.cancer_type,
            )
        questionnaire = load_ruleset(
            Path(__file__).parent / "data" / "rulesets" / f"{cfg.cancer_type}.sample"
        )
        pop = adsim.generate_population(cfg.population, args.seed)
        result = adsim.run_campaign(
            pop, cfg.learner, cfg.days, args.seed, cfg.campaign, questionnaire
        )
    except (ValueError, KeyError) as e:
        _fail(f"config error: {e}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = funnel_report(result.daily, window=min(10, cfg.days))
    funnel_path = out_dir / "funnel.csv"
    _write_csv(
        funnel_path,
        FUNNEL_CSV_HEADER,
        [[r[k] if not isinstance(r[k], float) else f"{r[k]:.6f}" for k in FUNNEL_CSV_HEADER]
         for r in [{**row, "starts": row["starts"]} for row in report["rows"]]],
    )
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(report["summary"], indent=2))
    outputs = [funnel_path, summary_path]
    if args.plot:
        svg = _svg_line_chart(
            [r["day"] for r in report["rows"]],
            [r["conversion_rate"] for r in report["rows"]],
            "Conversion rate over time",
        )
        plot_path = out_dir / "conversion_rate.svg"
        plot_path.write_text(svg)
        outputs.append(plot_path)
    _write_manifest(out_dir, "simulate", seed=args.seed, config_path=config_path,
                    started=started, outputs=outputs)
    s = report["summary"]
    print(f"{cfg.days} days simulated; trailing-{s['window']}-day conversion rate "
          f"{s['conversion_rate_mean']:.3f} (sd {s['conversion_rate_sd']:.3f})")
    return 0


def cmd_geo(args) -> int:
    from . import statlab

    started = _now()
    if not Path(args.countries).exists():
        _fail(f"no such file: {args.countries}")
    try:
        rows = statlab.load_country_csv(args.countries)
        kept = statlab.filter_countries(rows, args.min_impressions)
        report = statlab.country_ctr_model(kept)
    except ValueError as e:
        _fail(str(e))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "regression.csv"
    _write_csv(
        report_path,
        ["term", "coef", "se", "t", "p"],
        [(r["name"], f"{r['coef']:.8f}", f"{r['se']:.8f}", f"{r['t']:.4f}", f"{r['p']:.6f}")
         for r in report.as_rows()],
    )
    text_path = out_dir / "regression.txt"
    text_path.write_text(report.pretty() + "\n")
    _write_manifest(out_dir, "geo", started=started, outputs=[report_path, text_path])
    print(report.pretty())
    return 0


def cmd_validate_ruleset(args) -> int:
    from .rules import RulesetError, load_ruleset

    try:
        q = load_ruleset(Path(args.ruleset))
    except FileNotFoundError:
        _fail(f"no such file: {args.ruleset}")
    except RulesetError as e:
        _fail(str(e))
    print(f"OK: {q.cancer_type} v{q.version}, {len(q.questions)} questions, {len(q.rules)} rules")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    if args.rulesets:
        os.environ["ADSCREEN_RULESET_DIR"] = args.rulesets
    if args.event_log:
        os.environ["ADSCREEN_EVENT_LOG"] = args.event_log
    if args.ad_client:
        os.environ["ADSCREEN_AD_CLIENT"] = args.ad_client
    if args.static_dir:
        os.environ["ADSCREEN_STATIC_DIR"] = args.static_dir
    host, _, port = args.listen.partition(":")
    try:
        uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port or 8000))
    except OSError as e:
        _fail(f"bind failure on {args.listen}: {e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adscreen")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("vocab", help="build a prevalence-filtered vocabulary from query logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--stopwords")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train-eval", help="vectorize, leave-one-out evaluate, and rank attributes")
    p.add_argument("--logs", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--stopwords")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("simulate", help="run the closed-loop ad campaign simulator")
    p.add_argument("--config", help="simulation config (default: bundled paperlike.config)")
    p.add_argument("--learner", help="override learner: logistic|thompson|random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", action="store_true", help="also write an SVG conversion-rate chart")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("geo", help="per-country CTR regression")
    p.add_argument("--countries", required=True, help="country CSV")
    p.add_argument("--min-impressions", type=int, default=150)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geo)

    p = sub.add_parser("serve", help="run the screening HTTP service")
    p.add_argument("--listen", default="127.0.0.1:8000")
    p.add_argument("--rulesets", help="ruleset directory")
    p.add_argument("--event-log", help="event log path")
    p.add_argument("--ad-client", help="file:<path> or none")
    p.add_argument("--static-dir", help="serve static frontend assets from this directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("validate-ruleset", help="validate a ruleset document")
    p.add_argument("ruleset")
    p.set_defaults(func=cmd_validate_ruleset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
