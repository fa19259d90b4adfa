"""Command-line interface.

Wires manifests, JSON configs, the analyzer, the allocators, and the
synthetic benches into files under an output directory.  Every command is
deterministic given (flags, config file, seed); the thread-count hint
changes wall time only, never output bytes.

Exit codes: 0 success, 1 completed with per-layer failures, 2 fatal.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace

from .allocators import (
    _fmt,
    allocation_to_csv,
    assign_learning_rates,
    assign_sparsities,
    lr_config_from_dict,
    sparsity_config_from_dict,
)
from .bench import (
    ToyExperimentConfig,
    alignment_correlation,
    bias_sweep,
    mp_comparison_data,
    toy_config_from_dict,
)
from .exceptions import FarmsError
from .sampler import (
    LayerReport,
    analyze_model,
    subsample_config_from_dict,
    summarize_reports,
)
from .serialize import to_json
from .tensorio import load_manifest

__all__ = ["main"]

logger = logging.getLogger("farms")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2

CONFIG_SECTIONS = ("sampler", "layer_overrides", "learning_rate", "sparsity",
                   "toy", "bias_bench", "mp_check")

DEFAULT_BIAS_SHAPES = ((100, 100), (200, 100), (512, 100), (1024, 100))


class CliError(Exception):
    """Fatal usage or configuration problem."""


# ---------------------------------------------------------------------------
# Plumbing


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}; "
                       f"expected {CONFIG_SECTIONS}")
    return data


def _resolve_threads(flag):
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("FARMS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"FARMS_THREADS must be an integer, got {env!r}")
    return 1


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    print(f"wrote {path}")
    return path


def _emit(args, stem, payload, csv_text):
    if args.format in ("json", "both"):
        _write(args.out, stem + ".json", to_json(payload))
    if args.format in ("csv", "both"):
        _write(args.out, stem + ".csv", csv_text)


def _csv_table(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _shape_label(shape):
    return "x".join(str(v) for v in shape)


# ---------------------------------------------------------------------------
# Report plumbing shared by the allocator commands


def _report_from_dict(row) -> LayerReport:
    try:
        return LayerReport(
            name=row["name"], kind=row["kind"], shape=tuple(row["shape"]),
            baseline_alpha=row["baseline_alpha"],
            farms_alpha=row["farms_alpha"],
            esd_size_baseline=row["esd_size_baseline"],
            esd_size_farms=row["esd_size_farms"],
            submatrix_count=row["submatrix_count"],
            excluded=row.get("excluded", False),
            reason=row.get("reason", ""),
        )
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed layer report row: {exc}") from exc


def _load_reports(args, config, threads):
    """Layer reports either from a saved report file or a fresh analysis."""
    if getattr(args, "report", None):
        try:
            with open(args.report, encoding="utf-8") as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read report {args.report}: {exc}") from exc
        rows = data["layers"] if isinstance(data, dict) else data
        if not isinstance(rows, list):
            raise CliError("report file must hold a list of layer rows")
        return [_report_from_dict(row) for row in rows]
    if getattr(args, "manifest", None):
        report = _analyze(args, config, threads)
        return list(report.layers)
    raise CliError("provide --report or --manifest")


def _analyze(args, config, threads):
    manifest = load_manifest(args.manifest)
    cfg = subsample_config_from_dict(config.get("sampler", {}))
    overrides = config.get("layer_overrides") or None
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    return analyze_model(manifest, cfg, manifest_dir=manifest_dir,
                         overrides=overrides, threads=threads)


def _had_layer_errors(reports) -> bool:
    return any(r.reason.startswith("error:") for r in reports)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_analyze(args, config):
    threads = _resolve_threads(args.threads)
    report = _analyze(args, config, threads)
    rows = [[r.name, r.kind, _shape_label(r.shape), _fmt(r.baseline_alpha),
             _fmt(r.farms_alpha), r.esd_size_baseline, r.esd_size_farms,
             r.submatrix_count, _fmt(r.excluded), r.reason]
            for r in report.layers]
    csv_text = _csv_table(
        ["layer", "kind", "shape", "baseline_alpha", "farms_alpha",
         "esd_size_baseline", "esd_size_farms", "submatrix_count",
         "excluded", "reason"], rows)
    _emit(args, "report", report.to_dict(), csv_text)
    summary = report.summary
    print(f"{report.model_name}: {len(report.layers)} layers, "
          f"{report.error_count} errors")
    for metric in ("baseline", "farms"):
        stats = summary[metric]
        print(f"{metric} alpha: mean={_fmt(stats['mean'])} "
              f"std={_fmt(stats['std'])}")
    return EXIT_PARTIAL if report.error_count else EXIT_OK


def _merge_lr_config(args, config):
    section = config.get("learning_rate")
    cfg = lr_config_from_dict(section) if section else None
    if args.eta is not None:
        if cfg is None:
            cfg = lr_config_from_dict({"eta_t": args.eta})
        else:
            cfg = replace(cfg, eta_t=args.eta)
    if cfg is None:
        raise CliError("base rate required: pass --eta or set "
                       "learning_rate.eta_t in the config file")
    if args.no_ls:
        cfg = replace(cfg, layer_selection=None)
    return cfg


def cmd_allocate_lr(args, config):
    threads = _resolve_threads(args.threads)
    reports = _load_reports(args, config, threads)
    cfg = _merge_lr_config(args, config)
    result = assign_learning_rates(reports, cfg, metric=args.metric)
    _emit(args, "allocation_lr", result.to_dict(), allocation_to_csv(result))
    values = [e.value for e in result.per_layer]
    print(f"learning rates for {len(values)} layers in "
          f"[{_fmt(min(values))}, {_fmt(max(values))}]")
    return EXIT_PARTIAL if _had_layer_errors(reports) else EXIT_OK


def _merge_sparsity_config(args, config):
    section = config.get("sparsity")
    cfg = sparsity_config_from_dict(section) if section else None
    if args.target is not None:
        if cfg is None:
            cfg = sparsity_config_from_dict({"target": args.target})
        else:
            cfg = replace(cfg, target=args.target)
    if cfg is None:
        raise CliError("global budget required: pass --target or set "
                       "sparsity.target in the config file")
    return cfg


def cmd_allocate_sparsity(args, config):
    threads = _resolve_threads(args.threads)
    reports = _load_reports(args, config, threads)
    cfg = _merge_sparsity_config(args, config)
    result = assign_sparsities(reports, cfg, metric=args.metric)
    _emit(args, "allocation_sparsity", result.to_dict(),
          allocation_to_csv(result))
    if args.format == "csv":
        # the constraint report is part of the JSON payload; keep it
        # available when only CSV was requested
        _write(args.out, "sparsity_constraint.json",
               to_json(result.constraint_report))
    achieved = result.constraint_report["achieved_mean"]
    print(f"sparsity budget: target={_fmt(cfg.target)} "
          f"achieved={_fmt(achieved)}")
    return EXIT_PARTIAL if _had_layer_errors(reports) else EXIT_OK


def cmd_mp_check(args, config):
    section = dict(config.get("mp_check", {}))
    unknown = set(section) - {"m", "n", "trials", "bins", "seed"}
    if unknown:
        raise CliError(f"unknown mp_check config keys: {sorted(unknown)}")
    m, n = args.shape if args.shape else (section.get("m", 250),
                                          section.get("n", 1000))
    trials = args.trials if args.trials is not None else section.get("trials", 5)
    bins = args.bins if args.bins is not None else section.get("bins", 50)
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    data = mp_comparison_data(int(m), int(n), int(trials), int(seed),
                              bins=int(bins))
    rows = [[t, _fmt(ks)] for t, ks in enumerate(data["ks"])]
    _emit(args, "mp_check", data, _csv_table(["trial", "ks"], rows))
    print(f"y={_fmt(data['y'])} bulk edges "
          f"[{_fmt(data['bulk_edges'][0])}, {_fmt(data['bulk_edges'][1])}] "
          f"max ks={_fmt(max(data['ks']))}")
    return EXIT_OK


def _parse_shapes(text):
    shapes = []
    for token in text.split(","):
        parts = token.lower().split("x")
        if len(parts) != 2:
            raise CliError(f"bad shape {token!r}; expected MxN")
        try:
            shapes.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise CliError(f"bad shape {token!r}; expected MxN")
    return shapes


def cmd_bias_bench(args, config):
    threads = _resolve_threads(args.threads)
    section = dict(config.get("bias_bench", {}))
    unknown = set(section) - {"shapes", "trials", "seed"}
    if unknown:
        raise CliError(f"unknown bias_bench config keys: {sorted(unknown)}")
    if args.shapes:
        shapes = _parse_shapes(args.shapes)
    else:
        shapes = [tuple(s) for s in section.get("shapes", DEFAULT_BIAS_SHAPES)]
    trials = args.trials if args.trials is not None else section.get("trials", 20)
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    cfg = subsample_config_from_dict(config.get("sampler", {}))
    result = bias_sweep(shapes, int(trials), cfg, int(seed), threads=threads)
    rows = [[_shape_label(r["shape"]), r["trials"], r["completed"],
             _fmt(r["baseline"]["mean"]), _fmt(r["baseline"]["std"]),
             _fmt(r["farms"]["mean"]), _fmt(r["farms"]["std"])]
            for r in result.rows]
    csv_text = _csv_table(
        ["shape", "trials", "completed", "baseline_mean", "baseline_std",
         "farms_mean", "farms_std"], rows)
    _emit(args, "bias_bench", result.to_dict(), csv_text)
    print(f"mean-alpha range: baseline={_fmt(result.ranges['baseline'])} "
          f"farms={_fmt(result.ranges['farms'])}")
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_toy_align(args, config):
    cfg = toy_config_from_dict(config.get("toy", {}))
    if args.widths:
        cfg = replace(cfg, widths=tuple(int(w) for w in args.widths.split(",")))
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    elif args.seed is not None:
        seeds = tuple(args.seed + i for i in range(3))
    else:
        seeds = (0, 1, 2)
    summary = alignment_correlation(cfg, seeds, spearman=args.spearman)
    rows = []
    for series, seed in zip(summary.series, seeds):
        for point in series.best_by_width:
            rows.append([seed, point.width, point.step,
                         _fmt(point.alignment), _fmt(point.baseline_alpha),
                         _fmt(point.farms_alpha)])
    csv_text = _csv_table(
        ["seed", "width", "step", "alignment", "baseline_alpha",
         "farms_alpha"], rows)
    _emit(args, "toy_align", summary.to_dict(), csv_text)
    print(f"{summary.method} r vs alignment: farms={_fmt(summary.r_farms)} "
          f"baseline={_fmt(summary.r_baseline)} over {summary.n_points} runs")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_common(sub):
    sub.add_argument("--config", metavar="PATH",
                     help="JSON config file; sections: " + ", ".join(CONFIG_SECTIONS))
    sub.add_argument("--out", default="farms_out", metavar="DIR",
                     help="output directory, created if absent (default: farms_out)")
    sub.add_argument("--format", choices=("json", "csv", "both"),
                     default="json", help="output file format (default: json)")
    sub.add_argument("--threads", type=int, default=None, metavar="N",
                     help="worker pool size hint; falls back to FARMS_THREADS; "
                          "never changes output bytes")
    sub.add_argument("--seed", type=int, default=None,
                     help="seed override (config: seed key of the command's section)")
    sub.add_argument("--log-level", default="warning",
                     choices=("debug", "info", "warning", "error"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farms",
        description="Aspect-ratio-fixed spectral analysis of weight matrices, "
                    "with alpha-driven learning-rate and sparsity allocation.")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser(
        "analyze", help="per-layer tail exponents for a checkpoint",
        description="Analyze every layer of a manifest checkpoint and write "
                    "report.json/report.csv (config: sampler, layer_overrides).")
    analyze.add_argument("--manifest", required=True, metavar="PATH",
                         help="path to manifest.json")
    _add_common(analyze)

    lr = commands.add_parser(
        "allocate-lr", help="map tail exponents to per-layer learning rates",
        description="Allocate learning rates from a saved report or a fresh "
                    "analysis (config: learning_rate, sampler).")
    lr.add_argument("--report", metavar="PATH",
                    help="report.json from a previous analyze run")
    lr.add_argument("--manifest", metavar="PATH",
                    help="analyze this checkpoint instead of loading a report")
    lr.add_argument("--eta", type=float, default=None,
                    help="base learning rate (config: learning_rate.eta_t)")
    lr.add_argument("--no-ls", action="store_true",
                    help="disable the layer-selection heuristic "
                         "(config: learning_rate.layer_selection.enabled)")
    lr.add_argument("--metric", choices=("baseline", "farms"), default="farms",
                    help="which alpha drives the mapping (default: farms)")
    _add_common(lr)

    sparsity = commands.add_parser(
        "allocate-sparsity", help="map tail exponents to pruning ratios",
        description="Allocate layer-wise sparsity under a global budget "
                    "(config: sparsity, sampler).")
    sparsity.add_argument("--report", metavar="PATH",
                          help="report.json from a previous analyze run")
    sparsity.add_argument("--manifest", metavar="PATH",
                          help="analyze this checkpoint instead of loading a report")
    sparsity.add_argument("--target", type=float, default=None,
                          help="global sparsity budget (config: sparsity.target)")
    sparsity.add_argument("--metric", choices=("baseline", "farms"),
                          default="farms",
                          help="which alpha drives the mapping (default: farms)")
    _add_common(sparsity)

    mp = commands.add_parser(
        "mp-check", help="empirical vs theoretical Gaussian spectrum",
        description="Compare Gaussian sample spectra against the "
                    "Marchenko-Pastur law (config section: mp_check).")
    mp.add_argument("--shape", type=int, nargs=2, metavar=("M", "N"),
                    help="matrix shape (config: mp_check.m / mp_check.n)")
    mp.add_argument("--trials", type=int, default=None,
                    help="number of draws (config: mp_check.trials)")
    mp.add_argument("--bins", type=int, default=None,
                    help="histogram bins (config: mp_check.bins)")
    _add_common(mp)

    bias = commands.add_parser(
        "bias-bench", help="aspect-ratio bias sweep on random matrices",
        description="Sweep shapes of He-initialized matrices and compare the "
                    "spread of mean alphas (config: bias_bench, sampler).")
    bias.add_argument("--shapes", metavar="M1xN1,M2xN2,...",
                      help="comma-separated shapes (config: bias_bench.shapes)")
    bias.add_argument("--trials", type=int, default=None,
                      help="draws per shape (config: bias_bench.trials)")
    _add_common(bias)

    toy = commands.add_parser(
        "toy-align", help="teacher-student alignment correlation",
        description="Train single-index students across widths and correlate "
                    "checkpoint alphas with teacher alignment "
                    "(config section: toy).")
    toy.add_argument("--widths", metavar="W1,W2,...",
                     help="student widths (config: toy.widths)")
    toy.add_argument("--seeds", metavar="S1,S2,...",
                     help="experiment seeds, one full rerun each "
                          "(default: 0,1,2; --seed S shifts to S,S+1,S+2)")
    toy.add_argument("--spearman", action="store_true",
                     help="rank correlation instead of Pearson")
    _add_common(toy)

    return parser


_DISPATCH = {
    "analyze": cmd_analyze,
    "allocate-lr": cmd_allocate_lr,
    "allocate-sparsity": cmd_allocate_sparsity,
    "mp-check": cmd_mp_check,
    "bias-bench": cmd_bias_bench,
    "toy-align": cmd_toy_align,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        config = _load_config(args.config)
        return _DISPATCH[args.command](args, config)
    except (CliError, FarmsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
