"""Command-line entry point: ``serpaudit <command> [<subcommand>] [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import annotate as ann
from .analyze import (
    PairingSpec,
    group_means,
    make_pairs,
    run_cross_type_tests,
    run_figure2_tests,
    run_history_anova,
    time_control,
)
from .crawler import (
    WarmupSpec,
    balance,
    build_history,
    load_plan,
    make_profiles,
    run_audit,
    success_filter,
)
from .model import (
    LEANING_SCALE,
    LOCATIONS,
    BotType,
    DataError,
    HistoryKind,
    Metric,
    MetricConfig,
    load_profiles,
    read_comparisons,
    read_serp_log,
    read_stat_results,
    save_profiles,
    write_comparisons,
    write_serp_log,
    write_stat_results,
)
from .report import Figure, ReportSpec, emit_chart, grouped_panel, leaning_panel, time_panel

log = logging.getLogger("serpaudit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--log", action="append", default=[], help="input log (repeatable)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--engine", action="append", default=[], help="engine name (repeatable)")
    p.add_argument("--p", type=float, default=0.7, help="RBO persistence")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--family-size", type=int)
    p.add_argument("--allow-truth", action="store_true", help="simulator only")
    p.add_argument("--config", help="plan or persona YAML file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fresh(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.exists():
        p.unlink()
    return p


def _need(args, *names):
    for n in names:
        if not getattr(args, n.replace("-", "_")):
            raise UsageError(f"--{n} is required")


def _serp_records(args):
    _need(args, "log")
    recs = [r for path in args.log for r in read_serp_log(path)]
    if not recs:
        raise DataError("no records in " + ", ".join(args.log))
    return recs


def _comparisons(args):
    _need(args, "log")
    recs = [r for path in args.log for r in read_comparisons(path)]
    if not recs:
        raise DataError("no comparisons in " + ", ".join(args.log))
    return recs


# --- engines ---------------------------------------------------------------------

def _persona(args):
    from .simengine import EnginePersona

    cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
        # a plan may carry a persona section; sim serve also takes a bare persona file
        cfg = cfg.get("persona", cfg if args.command == "sim" else {})
    cfg.setdefault("seed", args.seed)
    if "leaning_bias" in cfg:
        cfg["leaning_bias"] = tuple(tuple(x) for x in cfg["leaning_bias"])
    try:
        return EnginePersona(**cfg)
    except TypeError as exc:
        raise DataError(f"bad persona config: {exc}") from exc


def _client(name: str, args):
    from .simengine import HttpSimClient, SimClient, SimEngine

    sim_url = getattr(args, "sim_url", None)
    if name in ("sim", "simengine") or sim_url:
        if sim_url:
            return HttpSimClient(sim_url, engine_name=name)
        return SimClient(SimEngine(_persona(args)))
    from .live import LiveEngineClient, Selectors

    try:
        return LiveEngineClient(Selectors.load(name))
    except FileNotFoundError:
        raise UsageError(f"no selector file for engine {name!r}") from None


# --- commands ----------------------------------------------------------------------

def cmd_profile_make(args):
    _need(args, "out")
    locs = args.locations.split(",") if args.locations else list(LOCATIONS)
    proxies = {}
    if args.proxies:
        with open(args.proxies, newline="", encoding="utf-8") as fh:
            proxies = {row["bot_id"]: row["proxy_url"] for row in csv.DictReader(fh)}
    profiles = make_profiles(args.type, locs, args.per_location, proxies=proxies)
    save_profiles(profiles, args.out)
    print(f"{len(profiles)} profiles -> {args.out}")


def cmd_warmup_run(args):
    _need(args, "profiles", "url_list", "out")
    engine = (args.engine or ["sim"])[0]
    client = _client(engine, args)
    spec = WarmupSpec(args.url_list, visits=args.visits, seed=args.seed)
    out = []
    for p in load_profiles(args.profiles):
        out.append(p if p.history_kind is HistoryKind.STATELESS else build_history(p, spec, client))
    save_profiles(out, args.out)
    warmed = sum(bool(p.cookie_jar) for p in out)
    print(f"{warmed}/{len(out)} profiles warmed -> {args.out}")


def cmd_audit_run(args):
    _need(args, "config")
    _need(args, "out")
    plan = load_plan(args.config)
    # "sim" is shorthand for the simulator, which logs itself as "simengine"
    plan = replace(plan, engines=tuple("simengine" if e == "sim" else e for e in plan.engines))
    clients = [_client(e, args) for e in plan.engines]
    run_audit(plan, clients, args.out)
    print(f"audit {plan.audit_id} -> {args.out}")


def cmd_sim_serve(args):
    from .simengine import SimEngine, SimServer

    srv = SimServer(SimEngine(_persona(args)), args.host, args.port, allow_truth=args.allow_truth)
    print(f"serving simulated engine at {srv.url}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()


def cmd_filter_success(args):
    _need(args, "out")
    kept, report = success_filter(_serp_records(args), args.min_urls, args.min_ips)
    write_serp_log(kept, _fresh(args.out))
    for ex in report:
        print(f"excluded {ex}", file=sys.stderr)
    print(f"{len(kept)} records kept, {len(report)} exclusions -> {args.out}")


def cmd_balance(args):
    _need(args, "out")
    out = balance(_serp_records(args), seed=args.seed)
    write_serp_log(out, _fresh(args.out))
    print(f"{len(out)} records -> {args.out}")


def cmd_compare_pairs(args):
    _need(args, "out")
    catmap = ann.CategoryMap.load(args.category_map) if args.category_map else None
    spec = PairingSpec(metric=Metric(args.metric), category_mode=args.category_mode,
                       max_distinct_categories=args.max_categories,
                       type3_subset_only=args.type3_subset_only,
                       word_count_range=tuple(args.word_range) if args.word_range else None)
    notes = []
    pairs = make_pairs(_serp_records(args), spec, catmap=catmap, cfg=MetricConfig(p=args.p),
                       notes=notes)
    for n in notes:
        print(n, file=sys.stderr)
    if not pairs:
        raise DataError("no comparable pairs")
    write_comparisons(pairs, _fresh(args.out))
    print(f"{len(pairs)} comparisons -> {args.out}")


def _print_stats(results):
    for r in results:
        print(f"{r.engine or '-':<12} {r.query_category or '-':<9} {r.comparison:<55} "
              f"stat={r.statistic:.4g} p={r.p_value:.4g} p_adj={r.p_adjusted:.4g} {r.stars.value}")


def cmd_stats(args):
    if args.test == "fig2":
        res = run_figure2_tests(_comparisons(args), args.family_size or 12, mode=args.mode)
    elif args.test == "crosstype":
        by_type = {}
        for r in _comparisons(args):
            by_type.setdefault(r.bot_type, []).append(r)
        res = run_cross_type_tests(by_type, args.family_size or 36, mode=args.mode,
                                   type3_subset_only=not args.all_queries)
    else:
        res = run_history_anova(_serp_records(args), MetricConfig(p=args.p))
        if args.family_size:
            from .stats import bonferroni
            res = bonferroni(res, args.family_size)
    _print_stats(res)
    if args.out:
        write_stat_results(res, _fresh(args.out))


def cmd_categorize_run(args):
    _need(args, "out")
    if args.annotator_url:
        annotator = ann.HttpAnnotator(args.annotator_url, timeout=args.timeout, retries=args.retries)
    elif args.stub:
        annotator = ann.StubCategoryAnnotator()
    else:
        annotator = None
    cmap = ann.categorize_domains(ann.domains_in(_serp_records(args)), annotator,
                                  overrides_path=args.overrides, cache_dir=args.cache_dir,
                                  workers=args.workers)
    cmap.save(args.out)
    print(f"{len(cmap)} domains -> {args.out}")


def _leaning_cells(args, recs):
    _need(args, "labels", "category_map")
    cmap = ann.CategoryMap.load(args.category_map)
    resolved = ann.consensus(ann.load_labels(args.labels), min_agree=args.min_agree,
                             collapse=args.collapse)
    notes = []
    cells = {s: ann.leaning_proportions(recs, resolved, cmap, s, notes=notes) for s in ann.Scope}
    for n in notes:
        print(n, file=sys.stderr)
    return cells


def cmd_leaning_aggregate(args):
    _need(args, "out")
    cells = _leaning_cells(args, _serp_records(args))
    rows = [c for s in ann.Scope for _, c in sorted(cells[s].items())]
    if not rows:
        raise DataError("no labelled news results")
    with open(_fresh(args.out), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["engine", "location", "scope", "n"] + [l.value for l in LEANING_SCALE])
        for c in rows:
            w.writerow([c.engine, c.location, c.scope.value, c.n] + [repr(x) for x in c.proportions])
    print(f"{len(rows)} cells -> {args.out}")


def cmd_report_emit(args):
    _need(args, "out")
    fig = Figure(args.figure)
    spec = ReportSpec(tuple(args.log), fig, args.out, title=args.title or "")
    if fig in (Figure.FIG2_PANEL, Figure.FIG3_PANEL):
        comps = _comparisons(args)
        tests = list(read_stat_results(args.stats)) if args.stats else run_figure2_tests(comps)
        panels = [grouped_panel(fig.value, group_means(comps, args.seed, args.resamples), tests)]
    elif fig is Figure.METRICS_GRID:
        comps = _comparisons(args)
        panels = []
        for m in Metric:
            sub = [c for c in comps if c.metric is m]
            if sub:
                panels.append(grouped_panel(m.value, group_means(sub, args.seed, args.resamples),
                                            run_figure2_tests(sub), y_label=m.value))
    elif fig is Figure.LEANING_PANEL:
        recs = _serp_records(args)
        cells = _leaning_cells(args, recs)
        engines = sorted({k[0] for k in cells[ann.Scope.ALL]})
        panels = [leaning_panel(e, cells[ann.Scope.ALL], cells[ann.Scope.TOP3], e) for e in engines]
    else:
        _need(args, "log")
        logs = [list(read_serp_log(p)) for p in args.log]
        panels = [time_panel("D by epoch", time_control(logs, MetricConfig(p=args.p),
                                                         args.seed, args.resamples))]
    paths, warnings = emit_chart(spec, panels)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    for p in paths:
        print(p)


def cmd_validate_e2e(args):
    from .validation import SCENARIOS, run_all

    only = args.only.split(",") if args.only else None
    if only and set(only) - set(SCENARIOS):
        raise UsageError(f"unknown scenario(s); choose from {', '.join(SCENARIOS)}")
    results = run_all(seed=args.seed, workdir=args.out, only=only)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} scenario(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="serpaudit", description="Audit search-result personalization.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def group(name, help_):
        g = sub.add_parser(name, help=help_)
        s = g.add_subparsers(dest="action", metavar="action", parser_class=_Parser)
        s.required = True
        return s

    def leaf(subs, name, fn, help_):
        p = subs.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = leaf(group("profile", "bot profiles"), "make", cmd_profile_make, "create a bot fleet")
    p.add_argument("--type", choices=[t.value for t in BotType], default="Type1")
    p.add_argument("--locations", help="comma-separated location codes")
    p.add_argument("--per-location", type=int, default=10)
    p.add_argument("--proxies", help="CSV of bot_id,proxy_url")

    p = leaf(group("warmup", "browsing-history warm-up"), "run", cmd_warmup_run,
             "visit seeded news URLs and keep the cookies")
    p.add_argument("--profiles")
    p.add_argument("--url-list")
    p.add_argument("--visits", type=int, default=20)
    p.add_argument("--sim-url", help="base URL of a running simulator")

    p = leaf(group("audit", "run audits"), "run", cmd_audit_run, "execute an audit plan")
    p.add_argument("--sim-url", help="base URL of a running simulator")

    p = leaf(group("sim", "simulated engine"), "serve", cmd_sim_serve, "serve the simulator over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)

    p = leaf(group("filter", "log filters"), "success", cmd_filter_success, "apply the success rule")
    p.add_argument("--min-urls", type=int, default=4)
    p.add_argument("--min-ips", type=int, default=3)

    p = sub.add_parser("balance", parents=[common], help="balance categories and bots")
    p.set_defaults(func=cmd_balance)

    p = leaf(group("compare", "pairwise comparisons"), "pairs", cmd_compare_pairs,
             "compare all bot pairs per query")
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.DRBO.value)
    p.add_argument("--category-mode", action="store_true")
    p.add_argument("--category-map")
    p.add_argument("--max-categories", type=int, default=4)
    p.add_argument("--type3-subset-only", action="store_true")
    p.add_argument("--word-range", type=int, nargs=2, metavar=("LO", "HI"))

    sp = sub.add_parser("stats", help="significance tests")
    ss = sp.add_subparsers(dest="test", metavar="test", parser_class=_Parser)
    ss.required = True
    for name, help_ in (("fig2", "same vs different location, general vs specific"),
                        ("crosstype", "bot type vs bot type"),
                        ("anova", "history kinds against stateless bots")):
        p = ss.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=cmd_stats)
        p.add_argument("--mode", choices=["auto", "exact", "normal"], default="auto")
        if name == "crosstype":
            p.add_argument("--all-queries", action="store_true",
                           help="do not restrict to the shared Type 3 query subset")

    p = leaf(group("categorize", "domain categories"), "run", cmd_categorize_run,
             "categorize every domain in the logs")
    p.add_argument("--annotator-url")
    p.add_argument("--stub", action="store_true", help="use the offline stub annotator")
    p.add_argument("--overrides")
    p.add_argument("--cache-dir")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--workers", type=int, default=4)

    def leaning_flags(p):
        p.add_argument("--labels")
        p.add_argument("--category-map")
        p.add_argument("--min-agree", type=int, default=2)
        p.add_argument("--collapse", action="store_true", help="agree on the three-way scale")

    p = leaf(group("leaning", "news leaning"), "aggregate", cmd_leaning_aggregate,
             "leaning proportions per engine and location")
    leaning_flags(p)

    p = leaf(group("report", "charts"), "emit", cmd_report_emit, "write an SVG chart and its CSV")
    p.add_argument("--figure", choices=[f.value for f in Figure], required=True)
    p.add_argument("--stats", help="stat results to annotate (default: recompute)")
    p.add_argument("--title")
    leaning_flags(p)

    p = leaf(group("validate", "self checks"), "e2e", cmd_validate_e2e,
             "run the simulator scenarios")
    p.add_argument("--only", help="comma-separated scenario names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"serpaudit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"serpaudit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
