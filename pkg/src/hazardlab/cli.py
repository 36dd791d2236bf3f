"""Command-line entry point: simulate, ingest, analyze, fit, diagnose, predict, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 convergence soft-fail (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analytics import (
    algorithm_pairs,
    paired_t_test,
    rating_distribution_by_grasp,
    rating_time_histograms,
    trust_change_by_algorithm,
)
from .eventlog import (
    DEFAULT_WINDOW,
    EventLogError,
    ExclusionRules,
    apply_exclusions,
    correct_latency,
    load_event_log,
    segment_grasps,
    write_episodes_csv,
    write_event_log,
)
from .hazardmodel import DEFAULT_WIDTH, CovariateRow, expand_to_intervals
from .inference import RHAT_GATE, FitConfig, PosteriorChains, fit, summarize
from .predict import default_grid, empirical_survival, posterior_survival_curves, write_curves_csv
from .simgen import SimConfig, simulate_sessions
from . import svgplot

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


def _threads() -> int:
    raw = os.environ.get("HAZARDLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"HAZARDLAB_THREADS must be an integer, got {raw!r}", EXIT_USAGE)


class Run:
    """Output directory bookkeeping plus the append-only run manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.outputs: list[str] = []
        self.inputs: list[str] = []
        self.config: dict = {}
        self.started = time.time()

    def claim(self, *names: str) -> list[Path]:
        self.out.mkdir(parents=True, exist_ok=True)
        paths = [self.out / n for n in names]
        taken = [p for p in paths if p.exists()]
        if taken and not self.args.force:
            raise CliError(f"{taken[0]} exists; pass --force to overwrite", EXIT_USAGE)
        self.outputs.extend(str(p) for p in paths)
        return paths

    def note(self, msg: str) -> None:
        if not self.args.quiet:
            print(msg)

    def finish(self) -> None:
        record = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "started": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
            "duration_s": round(time.time() - self.started, 3),
        }
        with open(self.out / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _load_episodes(args, run: Run):
    path = Path(args.events)
    if not path.exists():
        raise CliError(f"event log not found: {path}", EXIT_DATA)
    run.inputs.append(str(path))
    log = correct_latency(load_event_log(path), args.window)
    if log.events and not args.no_exclusions:
        report = apply_exclusions(log, ExclusionRules(latency_ms=args.latency_ms,
                                                      trial_duration_factor=args.duration_factor))
        for subject, reason in report.excluded:
            warnings.warn(f"excluding subject {subject}: {reason}")
        log = log.restrict(report.included)
    return segment_grasps(log), log


def _cohort(episodes, cohort: str):
    return [ep for ep in episodes if ep.is_final == (cohort == "final")]


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    run = Run(args, "simulate")
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_USAGE)
        if not isinstance(data, dict):
            raise CliError("config must be a JSON object", EXIT_USAGE)
        run.inputs.append(args.config)
    for flag in ("n_subjects", "rtt_ms", "echo_failure_prob"):
        if getattr(args, flag) is not None:
            data[flag] = getattr(args, flag)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        cfg = SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc), EXIT_USAGE)
    run.config = cfg.to_dict()
    events_path, truth_path = run.claim("events.jsonl", "ground_truth.csv")
    if cfg.n_subjects == 0:
        warnings.warn("n_subjects is 0; writing an empty event log")
    log, truth = simulate_sessions(cfg)
    with open(events_path, "w") as fh:
        write_event_log(log, fh)
    with open(truth_path, "w") as fh:
        truth.write_csv(fh)
    run.note(f"simulated {len(log)} subjects, {len(truth.episodes)} grasps -> {events_path}")
    run.finish()
    return EXIT_OK


def cmd_ingest(args) -> int:
    run = Run(args, "ingest")
    run.config = {"window": args.window, "latency_ms": args.latency_ms,
                  "duration_factor": args.duration_factor}
    path = Path(args.events)
    if not path.exists():
        raise CliError(f"event log not found: {path}", EXIT_DATA)
    run.inputs.append(str(path))
    log = correct_latency(load_event_log(path), args.window)
    episodes_path, excl_path = run.claim("episodes.csv", "exclusions.csv")
    included = log.subjects
    with open(excl_path, "w") as fh:
        fh.write("subject,status,reason\n")
        if log.events and not args.no_exclusions:
            report = apply_exclusions(log, ExclusionRules(
                latency_ms=args.latency_ms, trial_duration_factor=args.duration_factor))
            for s in report.included:
                fh.write(f"{s},included,\n")
            for s, reason in report.excluded:
                fh.write(f"{s},excluded,{reason}\n")
            included = report.included
        else:
            for s in included:
                fh.write(f"{s},included,\n")
    episodes = segment_grasps(log.restrict(included))
    with open(episodes_path, "w") as fh:
        write_episodes_csv(episodes, fh)
    run.note(f"{len(included)} subjects included, {len(episodes)} episodes -> {episodes_path}")
    run.finish()
    return EXIT_OK


ANALYTICS_FILES = ("trust_change_summary.csv", "t_test.csv", "grasp_distribution.csv",
                   "rating_time_hist_early.csv", "rating_time_hist_final.csv",
                   "trust_change_box.svg", "grasp_distribution.svg", "rating_time_hist.svg")


def _analytics(args, run: Run, episodes) -> None:
    (summary_p, ttest_p, dist_p, early_p, final_p,
     box_svg, dist_svg, hist_svg) = run.claim(*ANALYTICS_FILES)
    with open(summary_p, "w") as fh:
        trust_change_by_algorithm(episodes).write_csv(fh)
    pairs = algorithm_pairs(episodes, args.pairing)
    with open(ttest_p, "w") as fh:
        if len(pairs) >= 2:
            result = paired_t_test(pairs)
            result.write_csv(fh)
            run.note(f"paired t-test ({args.pairing} means, n={result.n_pairs}): "
                     f"t={result.t_statistic:.4g}, p={result.p_value:.4g}")
        else:
            warnings.warn("fewer than 2 gamma/echo pairs; t-test skipped")
            fh.write("n_pairs,mean_diff,t_statistic,df,p_value,degenerate\n")
            fh.write(f"{len(pairs)},,,,,true\n")
    with open(dist_p, "w") as fh:
        rating_distribution_by_grasp(episodes).write_csv(fh)
    early, final = rating_time_histograms(episodes, args.bin_width, center="place")
    if early.total + final.total == 0:
        warnings.warn("no rated grasps; histograms are empty")
    with open(early_p, "w") as fh:
        early.write_csv(fh)
    with open(final_p, "w") as fh:
        final.write_csv(fh)
    svgplot.trust_change_box_svg(summary_p, box_svg)
    svgplot.grasp_distribution_svg(dist_p, dist_svg)
    svgplot.rating_time_hist_svg(early_p, final_p, hist_svg)


def cmd_analyze(args) -> int:
    run = Run(args, "analyze")
    run.config = {"bin_width": args.bin_width, "pairing": args.pairing}
    episodes, _ = _load_episodes(args, run)
    _analytics(args, run, episodes)
    run.finish()
    return EXIT_OK


def cmd_fit(args) -> int:
    run = Run(args, "fit")
    episodes, _ = _load_episodes(args, run)
    chosen = [ep for ep in _cohort(episodes, args.cohort) if ep.rated or args.censored]
    if not any(ep.rated for ep in chosen):
        raise CliError(f"zero rated episodes in cohort {args.cohort!r}", EXIT_DATA)
    config = FitConfig(chains=args.chains, draws=args.draws, warmup=args.warmup, seed=args.seed)
    run.config = {"cohort": args.cohort, "width": args.width, "censored": args.censored,
                  **asdict(config)}
    posterior_p, summary_p = run.claim("posterior.csv", "summary.csv")
    table = expand_to_intervals(chosen, args.width, censored=args.censored)
    chains = fit(table, config, n_jobs=_threads())
    summary = summarize(chains)
    with open(posterior_p, "w") as fh:
        chains.write_csv(fh)
    with open(summary_p, "w") as fh:
        summary.write_csv(fh)
    run.note(f"cohort {args.cohort}: {sum(ep.rated for ep in chosen)} rated grasps, "
             f"{len(table)} interval rows")
    run.note(summary.table())
    run.finish()
    return _gate(summary, run)


def _gate(summary, run: Run) -> int:
    if summary.converged(RHAT_GATE):
        run.note(f"r_hat gate passed (all < {RHAT_GATE})")
        return EXIT_OK
    print(f"r_hat gate FAILED (some r_hat >= {RHAT_GATE} or degenerate)", file=sys.stderr)
    return EXIT_CONVERGENCE


def _read_posterior(path: str, run: Run) -> PosteriorChains:
    p = Path(path)
    if not p.exists():
        raise CliError(f"posterior file not found: {p}", EXIT_DATA)
    run.inputs.append(str(p))
    with open(p, newline="") as fh:
        try:
            return PosteriorChains.read_csv(fh)
        except (ValueError, IndexError) as exc:
            raise CliError(f"cannot read posterior {p}: {exc}", EXIT_DATA)


def cmd_diagnose(args) -> int:
    run = Run(args, "diagnose")
    chains = _read_posterior(args.posterior, run)
    summary = summarize(chains)
    (summary_p,) = run.claim("diagnostics.csv")
    with open(summary_p, "w") as fh:
        summary.write_csv(fh, names=list(summary.rows))
    run.note(summary.table())
    run.finish()
    return _gate(summary, run)


def _predict(args, run: Run, episodes, chains) -> None:
    chosen = [ep for ep in _cohort(episodes, args.cohort) if ep.rated]
    grid = default_grid(args.cohort, args.grid_step)
    emp = empirical_survival([ep.tRT for ep in chosen], grid)
    band_p, svg_p = run.claim("band.csv", "survival_overlay.svg")
    if chosen:
        rows = [CovariateRow.from_episode(ep) for ep in chosen]
        n = min(args.n_draws, chains.pooled().shape[0])
        curves, band = posterior_survival_curves(chains, rows, grid, n, args.seed)
        if getattr(args, "write_curves", False):
            (curves_p,) = run.claim("curves.csv")
            with open(curves_p, "w") as fh:
                write_curves_csv(curves + [emp], fh)
        with open(band_p, "w") as fh:
            band.write_csv(fh, emp)
    else:
        warnings.warn(f"no rated episodes in cohort {args.cohort!r}; survival band is empty")
        band_p.write_text("t,q05,q50,q95,empirical\n")
    title = "Predicted survival, " + ("final grasp" if args.cohort == "final" else "grasps 1-3")
    svgplot.survival_overlay_svg(band_p, svg_p, title)


def cmd_predict(args) -> int:
    run = Run(args, "predict")
    run.config = {"cohort": args.cohort, "n_draws": args.n_draws, "grid_step": args.grid_step}
    chains = _read_posterior(args.posterior, run)
    episodes, _ = _load_episodes(args, run)
    args.write_curves = True
    _predict(args, run, episodes, chains)
    run.finish()
    return EXIT_OK


def cmd_report(args) -> int:
    run = Run(args, "report")
    run.config = {"cohort": args.cohort, "n_draws": args.n_draws, "bin_width": args.bin_width,
                  "pairing": args.pairing}
    chains = _read_posterior(args.posterior, run)
    episodes, _ = _load_episodes(args, run)
    _analytics(args, run, episodes)
    _predict(args, run, episodes, chains)
    run.note(f"report written to {run.out}")
    run.finish()
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--quiet", action="store_true")

    ingest_opts = argparse.ArgumentParser(add_help=False)
    ingest_opts.add_argument("--window", type=int, default=DEFAULT_WINDOW,
                             help="rolling-median window in probes (odd)")
    ingest_opts.add_argument("--latency-ms", type=float, default=300.0)
    ingest_opts.add_argument("--duration-factor", type=float, default=3.0)
    ingest_opts.add_argument("--no-exclusions", action="store_true")

    analytics_opts = argparse.ArgumentParser(add_help=False)
    analytics_opts.add_argument("--bin-width", type=float, default=1.0)
    analytics_opts.add_argument("--pairing", choices=("subject", "grasp"), default="subject")

    predict_opts = argparse.ArgumentParser(add_help=False)
    predict_opts.add_argument("--posterior", required=True, help="posterior.csv from `fit`")
    predict_opts.add_argument("--cohort", choices=("early", "final"), default="final")
    predict_opts.add_argument("--n-draws", type=int, default=500)
    predict_opts.add_argument("--grid-step", type=float, default=0.1)

    parser = _Parser(prog="hazardlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic sessions")
    p.add_argument("--config", help="JSON file with simulator settings")
    p.add_argument("--n-subjects", dest="n_subjects", type=int)
    p.add_argument("--rtt-ms", dest="rtt_ms", type=float)
    p.add_argument("--echo-failure-prob", dest="echo_failure_prob", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", parents=[common, ingest_opts], help="parse and segment a log")
    p.add_argument("events")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", parents=[common, ingest_opts, analytics_opts],
                       help="trust-change and rating-time analytics")
    p.add_argument("events")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", parents=[common, ingest_opts], help="sample the hazard posterior")
    p.add_argument("events")
    p.add_argument("--cohort", choices=("early", "final"), default="early")
    p.add_argument("--width", type=float, default=DEFAULT_WIDTH)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--draws", type=int, default=5000)
    p.add_argument("--warmup", type=int, default=2000)
    p.add_argument("--censored", action="store_true",
                   help="let unrated grasps contribute exposure up to their horizon")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", parents=[common], help="r_hat and summaries of a posterior")
    p.add_argument("posterior")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("predict", parents=[common, ingest_opts, predict_opts],
                       help="posterior survival curves with empirical overlay")
    p.add_argument("events")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common, ingest_opts, analytics_opts, predict_opts],
                       help="all tables and plots in one directory")
    p.add_argument("events")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("fit", "predict", "report") and args.seed is None:
            args.seed = 0
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            else:
                warnings.simplefilter("always")
                warnings.showwarning = _show_warning
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except EventLogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
