"""Command-line surface: detect, build-icl, gen-synth, eval, report.

Flags override config-file values which override defaults. Backend
credentials come only from environment variables (TSDIAG_ENDPOINT,
TSDIAG_API_KEY); there is no flag for them on purpose.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import agents, icl, ingest, metrics, report as report_mod
from .analyzers import run_all
from .core import AnomalyRecord, Series
from .detector import DetectorInput, detect, pool_and_merge
from .errors import MissingInput, ParseError, ToolkitError
from .inject import export_benchmark, generate_benchmark, load_benchmark
from .represent import summarize
from .tools.stats import statistics

log = logging.getLogger("tsdiag")

DEFAULTS = {
    "window": 400,
    "stride": 400,
    "train_fraction": 0.5,
    "token_budget": 400,
    "merge_gap": 2,
    "backend": "rule",
    "model": "default",
    "icl_db": None,
    "top_k": 3,
    "seed": 0,
    "tau": 0.5,
    "jobs": 1,
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingInput(str(p))
    try:
        config = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc.msg}") from None
    unknown = set(config) - set(DEFAULTS)
    if unknown:
        raise ParseError(f"{p}: unknown config keys {sorted(unknown)}")
    return config


def _setting(args, config: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _make_backend(name: str, args, config: dict):
    if name == "rule":
        return None
    if name == "mock":
        mock_dir = getattr(args, "mock_dir", None)
        if mock_dir is None:
            raise MissingInput("--backend mock requires --mock-dir")
        return agents.MockCompletionBackend(mock_dir)
    if name == "http":
        return agents.HttpCompletionBackend(model=_setting(args, config, "model"))
    raise ParseError(f"unknown backend {name!r}")


def _load_series(path: str) -> list[Series]:
    """A benchmark directory (manifest.json) or a CSV/JSONL file/directory."""
    p = Path(path)
    if p.is_dir() and (p / "manifest.json").exists():
        return [series for series, _ in load_benchmark(path)]
    dataset = ingest.load_dataset(path)
    return list(dataset.series)


def _detect_series(series: Series, plan: ingest.WindowPlan, budget: int,
                   backend, db, top_k: int) -> list[AnomalyRecord]:
    records: list[AnomalyRecord] = []
    for offset, values in ingest.windows(series.values, plan):
        t0 = time.monotonic()
        window = Series(values=values,
                        series_id=f"{series.series_id}:{offset}")
        summary = summarize(values, budget)
        bundles = tuple(run_all(window, summary))
        references: tuple = ()
        if db is not None and backend is not None:
            candidate_types = set()
            for cand in pool_and_merge(bundles):
                candidate_types.update(int(t) for t in cand.types)
            if candidate_types:
                references = tuple(icl.retrieve(db, values, candidate_types,
                                                top_k=top_k))
        dinput = DetectorInput(offset=offset, summary=summary,
                               bundles=bundles, references=references)
        found = detect(dinput, backend=backend)
        records.extend(found)
        log.info("%s offset %d: %d records, %.0f ms, ~%d summary tokens",
                 series.series_id, offset, len(found),
                 1000 * (time.monotonic() - t0), summary.estimated_tokens)
    records.sort(key=lambda r: (r.start, r.end))
    return records


def _write_records(path: str, results: list[tuple[str, list[AnomalyRecord]]]):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for series_id, records in results:
            for rec in records:
                line = {"series": series_id}
                line.update(rec.to_json())
                fh.write(json.dumps(line) + "\n")
    os.replace(tmp, path)


def _read_records(path: str) -> dict[str, list[AnomalyRecord]]:
    p = Path(path)
    if not p.exists():
        raise MissingInput(str(p))
    grouped: dict[str, list[AnomalyRecord]] = {}
    with p.open(encoding="utf-8") as fh:
        for row_idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{p}: {exc.msg}", row=row_idx) from None
            if "series" not in obj:
                raise ParseError(f"{p}: record lacks 'series'", row=row_idx)
            grouped.setdefault(obj["series"], []).append(
                AnomalyRecord.from_json(obj)
            )
    return grouped


def cmd_detect(args) -> int:
    config = _load_config(args.config)
    try:
        plan = ingest.WindowPlan(window=_setting(args, config, "window"),
                                 stride=_setting(args, config, "stride"))
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    budget = _setting(args, config, "token_budget")
    backend = _make_backend(_setting(args, config, "backend"), args, config)
    top_k = _setting(args, config, "top_k")
    db_path = getattr(args, "icl_db", None) or config.get("icl_db")
    db = icl.load_db(db_path) if db_path else None
    series_list = _load_series(args.data)

    jobs = _setting(args, config, "jobs")
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            all_records = list(pool.map(
                lambda s: _detect_series(s, plan, budget, backend, db, top_k),
                series_list,
            ))
    else:
        all_records = [_detect_series(s, plan, budget, backend, db, top_k)
                       for s in series_list]
    results = [(s.series_id, recs)
               for s, recs in zip(series_list, all_records)]
    _write_records(args.out, results)
    total = sum(len(r) for _, r in results)
    print(f"wrote {total} records for {len(results)} series to {args.out}")

    if args.report_dir:
        tau = _setting(args, config, "tau")
        for series, recs in zip(series_list, all_records):
            diagnosis = agents.supervise(recs, statistics(series.values),
                                         tau=tau)
            report_mod.render_report(series, diagnosis, args.report_dir)
        print(f"wrote {len(series_list)} reports to {args.report_dir}")
    return 0


def cmd_build_icl(args) -> int:
    config = _load_config(args.config)
    series_list = _load_series(args.data)
    db = icl.build_db(series_list, segment_length=args.segment_length,
                      seed=args.seed)
    manifest = icl.save_db(db, args.out)
    print(f"built {len(db)} prototypes into {args.out}"
          f" (manifest {manifest})")
    return 0


def cmd_gen_synth(args) -> int:
    samples = generate_benchmark(per_type=args.per_type, seed=args.seed,
                                 length=args.length)
    manifest = export_benchmark(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out} (manifest {manifest})")
    return 0


def _load_labeled(path: str) -> list[Series]:
    series_list = _load_series(path)
    missing = [s.series_id for s in series_list if s.labels is None]
    if missing:
        raise ParseError(f"series without labels cannot be evaluated:"
                         f" {missing[:5]}")
    return series_list


def cmd_eval(args) -> int:
    grouped = _read_records(args.records)
    series_list = _load_labeled(args.data)
    metric_ids = tuple(m.strip() for m in args.metrics.split(","))
    for m in metric_ids:
        if m not in metrics.METRIC_IDS:
            raise ParseError(f"unknown metric {m!r}")
    tau = None if args.threshold == "best-f1" else float(args.threshold)
    results = [
        metrics.SeriesResult(s.series_id, tuple(grouped.get(s.series_id, [])),
                             s.labels)
        for s in series_list
    ]
    eval_report = metrics.evaluate_dataset(results, metric_ids=metric_ids,
                                           tau=tau)
    print(eval_report.render_table())
    if args.out:
        tmp = args.out + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(eval_report.to_json(), fh, indent=2)
        os.replace(tmp, args.out)
        print(f"wrote report JSON to {args.out}")
    return 0


def cmd_report(args) -> int:
    config = _load_config(args.config)
    grouped = _read_records(args.records)
    series_list = _load_series(args.data)
    tau = _setting(args, config, "tau")
    written = 0
    for series in series_list:
        records = grouped.get(series.series_id, [])
        diagnosis = agents.supervise(records, statistics(series.values),
                                     tau=tau)
        report_mod.render_report(series, diagnosis, args.out)
        written += 1
    print(f"wrote {written} reports to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsdiag",
        description="Univariate time-series anomaly detection and diagnosis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-window progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the detection pipeline")
    p.add_argument("--data", required=True, help="CSV/JSONL file or directory,"
                   " or a generated benchmark directory")
    p.add_argument("--out", required=True, help="records JSONL output path")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--token-budget", dest="token_budget", type=int)
    p.add_argument("--backend", choices=("rule", "mock", "http"))
    p.add_argument("--mock-dir", dest="mock_dir",
                   help="canned responses for --backend mock")
    p.add_argument("--model")
    p.add_argument("--icl-db", dest="icl_db",
                   help="reference database directory")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--report-dir", dest="report_dir",
                   help="also write per-series diagnosis reports here")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("build-icl", help="build the reference database")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--segment-length", dest="segment_length", type=int,
                   default=400)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(fn=cmd_build_icl)

    p = sub.add_parser("gen-synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--per-type", dest="per_type", type=int, default=10)
    p.add_argument("--length", type=int, default=400)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("eval", help="score records against labels")
    p.add_argument("--records", required=True, help="records JSONL path")
    p.add_argument("--data", required=True, help="labeled dataset path")
    p.add_argument("--metrics", default=",".join(metrics.METRIC_IDS))
    p.add_argument("--threshold", default="best-f1",
                   help='"best-f1" or a fixed value in [0,1]')
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render diagnosis reports")
    p.add_argument("--records", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--tau", type=float)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ToolkitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
