"""Command-line harness: ``run``, ``compare``, ``rank`` and ``ablate``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort.
The output directory is taken from ``--out``, then the ``FWDPROMPT_OUT``
environment variable, then the config's ``output_dir``.
"""

from __future__ import annotations

import argparse
import os
from concurrent.futures import ThreadPoolExecutor
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .metrics import rank_experiment
from .report import (
    ReportError,
    accuracy_csv,
    bar_chart,
    build_report,
    comparison_csv,
    comparison_rows,
    emit_report,
    format_table,
    load_report,
    metrics_csv,
    rank_csv,
    report_charts,
)
from .synthetic_tasks import generate_suite
from .tensor_core import NumericalError
from .toy_mllm import ToyMLLM
from .trainer import (
    PROMPT_METHODS,
    RANK_SCENARIOS,
    Method,
    rank_embeddings,
    run_method,
    run_rank_scenarios,
    with_direct_reference,
)

OUT_ENV = "FWDPROMPT_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _log(msg):
    print(msg, file=sys.stderr)


def output_dir(args, experiment=None):
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if experiment is not None:
        return Path(experiment.output_dir)
    return Path(".")


def _load(args):
    exp = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        exp.seed = args.seed
    return exp


def _world(exp):
    model_cfg = exp.model_config()
    tasks, pretrain = generate_suite(exp.suite_config(), model_cfg)
    return tasks, pretrain, ToyMLLM(model_cfg)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _run_methods(exp, methods, out):
    """Run ``methods`` on the config's suite and write one report per method."""
    tasks, pretrain, model = _world(exp)
    direct = None
    needs_ref = exp.report.forward_reference or Method.DIRECTIT in methods
    if needs_ref:
        t0 = time.perf_counter()
        direct = run_method(Method.DIRECTIT, tasks, pretrain, exp.train_config(Method.DIRECTIT), model)
        direct.timing["total"] = time.perf_counter() - t0
    reports = {}
    for method in methods:
        method = Method(method)
        if method is Method.DIRECTIT:
            result = direct
        else:
            t0 = time.perf_counter()
            result = run_method(method, tasks, pretrain, exp.train_config(method), model,
                                checkpoint_dir=out / "checkpoints" / method.value)
            result.timing["total"] = time.perf_counter() - t0
            if direct is not None and exp.report.forward_reference:
                with_direct_reference(result, direct)
        report = build_report(result, exp, tasks, pretrain, exp.seed)
        stem = method.value
        _write(out / f"{stem}.report.json", emit_report(report))
        _write(out / f"{stem}.accuracy.csv", accuracy_csv(report))
        _write(out / f"{stem}.metrics.csv", metrics_csv(report))
        if exp.report.charts:
            for suffix, svg in report_charts(report).items():
                _write(out / f"{stem}.{suffix}", svg)
        reports[stem] = report
        _log(f"{stem}: wrote {out / (stem + '.report.json')}")
    return reports


def _summary(reports):
    labels = list(reports)
    header, rows = comparison_rows([reports[k] for k in labels], labels)
    if len(labels) == 1:
        return format_table(header[:2], [r[:2] for r in rows])
    return format_table(header, rows)


def cmd_run(args):
    exp = _load(args)
    methods = [Method(args.method)] if args.method else exp.methods
    out = output_dir(args, exp)
    reports = _run_methods(exp, methods, out)
    print(_summary(reports), end="")
    return EXIT_OK


def cmd_ablate(args):
    exp = _load(args)
    out = output_dir(args, exp)
    reports = _run_methods(exp, list(PROMPT_METHODS), out)
    header, rows = comparison_rows(list(reports.values()), list(reports))
    _write(out / "ablation.csv", comparison_csv(header, rows))
    print(format_table(header, rows), end="")
    return EXIT_OK


def _labels(reports):
    labels = [r.get("method", "report") for r in reports]
    if len(set(labels)) < len(labels):
        labels = [f"{lab}#{i}" for i, lab in enumerate(labels, start=1)]
    return labels


def cmd_compare(args):
    if len(args.reports) < 2:
        raise ReportError("compare needs at least two reports")
    with ThreadPoolExecutor(max_workers=min(8, len(args.reports))) as pool:
        reports = list(pool.map(load_report, args.reports))
    labels = _labels(reports)
    header, rows = comparison_rows(reports, labels)
    out = output_dir(args)
    _write(out / "compare.csv", comparison_csv(header, rows))
    print(format_table(header, rows), end="")
    return EXIT_OK


def cmd_rank(args):
    exp = _load(args)
    out = output_dir(args, exp)
    tasks, pretrain, model = _world(exp)
    cfg = exp.train_config(Method.FWD_PROMPT)
    models = run_rank_scenarios(tasks, pretrain, cfg, model)
    table = rank_experiment(rank_embeddings(models, tasks, cfg), cfg.epsilon)
    text = rank_csv(table, RANK_SCENARIOS)
    _write(out / "rank.csv", text)
    if exp.report.charts:
        groups = {str(t): {s: float(table[t][s]) for s in RANK_SCENARIOS} for t in sorted(table)}
        _write(out / "rank.svg", bar_chart(groups, f"Estimated rank (epsilon={cfg.epsilon})", "rank"))
    print(text, end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="fwdprompt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config (YAML or JSON)")
            p.add_argument("--seed", type=int, help="override the config's master seed")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, then the config)")

    p = sub.add_parser("run", help="run the configured methods and write reports")
    common(p)
    p.add_argument("--method", choices=[m.value for m in Method], help="run only this method")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="side-by-side table of two or more reports")
    p.add_argument("reports", nargs="+", help="report JSON files")
    common(p, config=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rank", help="estimated input-embedding rank per task and scenario")
    common(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("ablate", help="run the projection and separated-pool ablations")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReportError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        _log(f"numerical abort: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
