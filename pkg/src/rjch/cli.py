"""Command-line entry point: ``rjch sweep``, ``rjch trace`` and ``rjch verify``.

Exit codes: 0 success, 2 invalid flags or config, 3 infeasible ring
configuration, 4 unreadable or malformed trace, 5 verification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from rjch import BACKEND
from rjch.errors import ConfigurationError, InfeasibleConfig, TraceFormatError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TRACE, EXIT_VERIFY = 0, 2, 3, 4, 5

try:
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("artifact")
except Exception:  # not installed, e.g. run from a source checkout
    VERSION = "0.1.0"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int
    version: str = VERSION
    outputs: list[str] = field(default_factory=list)
    # machine-dependent; excluded from the hash
    backend: str = BACKEND
    started: str = ""
    finished: str = ""

    def digest(self) -> str:
        core = dict(command=self.command, params=self.params, seed=self.seed, version=self.version)
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["manifest_hash"] = self.digest()
        return d


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _finish(manifest: RunManifest, out: Path | None) -> None:
    manifest.finished = _now()
    if out is not None:
        _write(out / "manifest.json", json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


# ---- argument parsing -------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _bias(text: str):
    from rjch.simulator import BiasConfig

    try:
        p, slot = text.split(":")
        return BiasConfig(int(slot), float(p))
    except (ValueError, ConfigurationError) as exc:
        raise argparse.ArgumentTypeError(f"--bias expects P:SLOT ({exc})") from None


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rjch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {VERSION} ({BACKEND} core)")
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="load-balancing sweep over epsilon and strategies")
    sw.add_argument("--objects", type=int, default=10000)
    sw.add_argument("--bins", type=int, default=1000)
    sw.add_argument("--epsilons", type=_float_list, default=[0.1, 0.3, 1.0, 3.0])
    sw.add_argument("--trials", type=int, default=100)
    sw.add_argument("--strategies", type=_str_list, default=["CH_BL", "RJ_CH"])
    sw.add_argument("--virtual", default="0", help="virtual copies per bin: an integer or 'logk'")
    sw.add_argument("--seed", type=int, default=int(os.environ.get("RJCH_SEED", "0")))
    sw.add_argument("--address-bits", type=int, default=20)
    sw.add_argument("--probes", type=int, default=100, help="fresh keys averaged for the next-insert metrics")
    sw.add_argument("--no-steps32", action="store_true", help="skip the 2**32-address step metric")
    mode = sw.add_mutually_exclusive_group()
    mode.add_argument("--dynamic", action="store_true", help="apply object and bin churn before measuring")
    mode.add_argument("--remove-bin", action="store_true", help="measure the cost of removing one bin")
    sw.add_argument("--churn-model", choices=["replace", "incremental"], default="replace")
    sw.add_argument("--churn-events", type=int, default=None)
    sw.add_argument("--bias", type=_bias, default=None, metavar="P:SLOT")
    sw.add_argument("--out", type=Path, required=True)
    sw.add_argument("--jobs", type=int, default=_default_jobs())

    tr = sub.add_parser("trace", help="trace-driven cache simulation")
    cfg = tr.add_mutually_exclusive_group(required=True)
    cfg.add_argument("--config", type=Path, help="JSON server configuration")
    cfg.add_argument("--preset", help="named configuration, e.g. aol-1 or clicks-3")
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="CSV trace: timestamp_minutes,url")
    src.add_argument("--synthetic", metavar="PARAMS",
                     help="'auto' or events=N,unique=U,zipf=S,duration=MIN")
    tr.add_argument("--strategies", type=_str_list, default=["CH_BL", "RJ_CH"])
    tr.add_argument("--seed", type=int, default=int(os.environ.get("RJCH_SEED", "0")))
    tr.add_argument("--address-bits", type=int, default=None)
    tr.add_argument("--out", type=Path, required=True)
    tr.add_argument("--jobs", type=int, default=1)

    ve = sub.add_parser("verify", help="exact oracle checks on small instances")
    ve.add_argument("--suite", choices=["lemmas", "dominance", "bounds", "all"], default="all")
    ve.add_argument("--max-k", type=int, default=4)
    ve.add_argument("--max-n", type=int, default=12)
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--inserts", type=int, default=10000,
                    help="fresh objects per epsilon for the empirical search table")
    ve.add_argument("--out", type=Path, default=None)
    return ap


# ---- sweep ----------------------------------------------------------------------

def _virtual(text: str, k: int) -> int:
    from rjch.simulator import log_virtual

    if text.lower() in ("logk", "log", "log(k)"):
        return log_virtual(k)
    try:
        v = int(text)
    except ValueError:
        raise UsageError(f"--virtual must be an integer or 'logk', got {text!r}") from None
    if v < 0:
        raise UsageError("--virtual must be non-negative")
    return v


def cmd_sweep(args) -> int:
    from rjch.simulator import ChurnConfig, StaticConfig, rows_to_csv, rows_to_json, run_sweep, summary_rows

    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    if args.objects < 1 or args.bins < 1 or args.trials < 1 or args.probes < 1:
        raise UsageError("--objects, --bins, --trials and --probes must be positive")
    if any(not e > 0 for e in args.epsilons):
        raise UsageError("epsilon must be positive")
    v = _virtual(args.virtual, args.bins)
    mode = "dynamic" if args.dynamic else "removal" if args.remove_bin else "static"
    params = dict(objects=args.objects, bins=args.bins, epsilons=args.epsilons, trials=args.trials,
                  strategies=args.strategies, virtual=v, address_bits=args.address_bits,
                  probes=args.probes, steps32=not args.no_steps32, mode=mode,
                  bias=None if args.bias is None else asdict(args.bias))
    if mode == "dynamic":
        params.update(churn_model=args.churn_model, churn_events=args.churn_events)
    manifest = RunManifest("sweep", params, args.seed, started=_now())
    try:
        common = dict(n=args.objects, k=args.bins, epsilons=args.epsilons, virtual=v,
                      strategies=args.strategies, trials=args.trials, seed=args.seed,
                      address_bits=args.address_bits, probe_repeats=args.probes,
                      measure_steps32=not args.no_steps32, bias=args.bias)
        if mode == "dynamic":
            cfg = ChurnConfig(**common, churn_events=args.churn_events, churn_model=args.churn_model)
        else:
            cfg = StaticConfig(**common)
        result = run_sweep(cfg, mode, args.jobs)
    except InfeasibleConfig as exc:
        print(f"rjch: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None

    out: Path = args.out
    rows = summary_rows(result.summaries)
    timing = summary_rows(result.summaries, wall_clock=True)
    _write(out / "sweep.csv", rows_to_csv(rows))
    _write(out / "sweep.json", json.dumps(dict(manifest_hash=manifest.digest(), rows=json.loads(rows_to_json(rows))),
                                          indent=2, sort_keys=True) + "\n")
    _write(out / "timing.csv", rows_to_csv(timing))
    manifest.outputs = ["sweep.csv", "sweep.json", "timing.csv"]
    _finish(manifest, out)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


# ---- trace ------------------------------------------------------------------------

def _synthetic_params(text: str) -> dict:
    keys = {"events": int, "unique": int, "zipf": float, "duration": float}
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"--synthetic expects key=value pairs, got {part!r}")
        k, val = (s.strip() for s in part.split("=", 1))
        if k not in keys:
            raise UsageError(f"unknown --synthetic key {k!r}")
        try:
            out[k] = keys[k](val)
        except ValueError:
            raise UsageError(f"bad value for {k}: {val!r}") from None
    missing = set(keys) - set(out)
    if missing:
        raise UsageError(f"--synthetic missing {sorted(missing)}")
    return out


def _load_config(args):
    from rjch.trace import PAPER_CONFIGS, CacheConfig

    if args.preset is not None:
        if args.preset not in PAPER_CONFIGS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PAPER_CONFIGS)}")
        return PAPER_CONFIGS[args.preset]
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    try:
        return CacheConfig.from_json(text)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _trace_job(job):
    from rjch.trace import run_cache_sim

    config, events, strategy, seed, bits, baseline = job
    return run_cache_sim(config, events, strategy, seed, bits, baseline)


def cmd_trace(args) -> int:
    from rjch.ring import Strategy
    from rjch.trace import generate_synthetic_trace, load_trace, run_baseline, shaped_config, synthetic_trace_for

    config = _load_config(args)
    try:
        strategies = [Strategy.parse(s).name for s in args.strategies]
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    params: dict = dict(config=asdict(config), strategies=strategies, address_bits=args.address_bits)
    if args.input is not None:
        try:
            events = load_trace(str(args.input))
        except OSError as exc:
            print(f"rjch: cannot read trace: {exc}", file=sys.stderr)
            return EXIT_TRACE
        except TraceFormatError as exc:
            print(f"rjch: {args.input}: {exc}", file=sys.stderr)
            return EXIT_TRACE
        except UnicodeDecodeError as exc:
            print(f"rjch: {args.input}: not UTF-8 ({exc})", file=sys.stderr)
            return EXIT_TRACE
        params["input"] = str(args.input)
        params["input_sha256"] = hashlib.sha256(args.input.read_bytes()).hexdigest()
    elif args.synthetic.strip() == "auto":
        config = shaped_config(config)
        params["config"] = asdict(config)
        params["synthetic"] = "auto"
        events = synthetic_trace_for(config, seed=args.seed)
    else:
        sp = _synthetic_params(args.synthetic)
        params["synthetic"] = sp
        try:
            events = generate_synthetic_trace(sp["events"], sp["unique"], sp["zipf"], sp["duration"], args.seed)
        except ConfigurationError as exc:
            raise UsageError(str(exc)) from None
    manifest = RunManifest("trace", params, args.seed, started=_now())
    baseline = run_baseline(config, events)
    jobs = [(config, events, s, args.seed, args.address_bits, baseline) for s in strategies]
    if args.jobs > 1 and len(jobs) > 1:
        from multiprocessing import Pool

        with Pool(min(args.jobs, len(jobs))) as pool:
            stats = pool.map(_trace_job, jobs)
    else:
        stats = [_trace_job(j) for j in jobs]
    results = {s: st.to_dict() for s, st in zip(strategies, stats)}
    report = dict(manifest_hash=manifest.digest(), events=len(events), config=asdict(config), results=results)
    if "RJ_CH" in results and "CH_BL" in results:
        rj, bl = results["RJ_CH"], results["CH_BL"]
        report["comparison"] = dict(
            additional_misses=dict(RJ_CH=rj["additional_misses"], CH_BL=bl["additional_misses"]),
            failures=dict(RJ_CH=rj["failures"], CH_BL=bl["failures"]),
            rj_fewer_additional_misses=rj["additional_misses"] < bl["additional_misses"],
            rj_no_more_failures=rj["failures"] <= bl["failures"],
        )
    _write(args.out / "trace.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.outputs = ["trace.json"]
    _finish(manifest, args.out)
    for s, r in results.items():
        print(f"{s:14s} misses={r['total_misses']} additional={r['additional_misses']} failures={r['failures']}")
    return EXIT_OK


# ---- verify ---------------------------------------------------------------------

def _bounds_table(inserts: int, seed: int) -> list[dict]:
    from rjch.metrics import chbl_search_bound, rjch_search_bound, worst_case_expected_searches
    from rjch.ring import capacity_for
    from rjch.simulator import worst_case_searches

    rows = []
    for eps in (0.1, 0.3, 0.5, 1.0, 3.0):
        C = capacity_for(10000, 1000, eps)
        rows.append(dict(
            epsilon=eps, chbl_bound=chbl_search_bound(eps), rjch_bound=rjch_search_bound(eps),
            geometric=worst_case_expected_searches(10000, 1000, C),
            empirical_rjch=worst_case_searches(10000, 1000, eps, inserts, seed) if inserts > 0 else None,
            inserts=inserts,
        ))
    return rows


def cmd_verify(args) -> int:
    from rjch.oracle import run_suite

    if args.max_k < 0 or args.max_n < 0:
        raise UsageError("--max-k and --max-n must be non-negative")
    params = dict(suite=args.suite, max_k=args.max_k, max_n=args.max_n, inserts=args.inserts)
    manifest = RunManifest("verify", params, args.seed, started=_now())
    checks = run_suite(args.suite, args.max_k, args.max_n, args.seed)
    failed = [c for c in checks if not c.passed]
    report = dict(manifest_hash=manifest.digest(), suite=args.suite, passed=not failed,
                  total=len(checks), failed=len(failed), failures=[c.to_dict() for c in failed])
    summary: dict[str, list[int]] = {}
    for c in checks:
        s = summary.setdefault(c.name, [0, 0])
        s[0] += 1
        s[1] += int(c.passed)
    report["checks"] = {name: dict(total=t, passed=p) for name, (t, p) in sorted(summary.items())}
    if args.suite in ("bounds", "all"):
        report["bounds_table"] = _bounds_table(args.inserts, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        _write(args.out / "verify.json", text)
        manifest.outputs = ["verify.json"]
        _finish(manifest, args.out)
    for name, (t, p) in sorted(summary.items()):
        print(f"{'PASS' if p == t else 'FAIL'} {name}: {p}/{t}")
    if "bounds_table" in report:
        print("epsilon  chbl_bound  rjch_bound  geometric  empirical")
        for r in report["bounds_table"]:
            emp = "-" if r["empirical_rjch"] is None else f"{r['empirical_rjch']:.4f}"
            print(f"{r['epsilon']:7g}  {r['chbl_bound']:10.4f}  {r['rjch_bound']:10.4f}  {r['geometric']:9.4f}  {emp}")
    for c in failed[:20]:
        print(f"failed: {c.name} {json.dumps(c.instance)} {c.detail}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "trace": cmd_trace, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rjch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
