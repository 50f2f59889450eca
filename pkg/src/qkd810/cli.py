"""Command-line front end: ``qkd810 <subcommand> ...``."""
from __future__ import annotations

import argparse
import socket
import sys
from pathlib import Path

import yaml

from . import scenario as sc
from .coincidence import build_histogram, detect_peaks
from .errors import ConfigError, Qkd810Error
from .keyrate import SecurityParams, crossover_analysis
from .tagio import load_stream


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "--set")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config_path(name):
    p = Path(name)
    if p.exists():
        return p
    return sc.bundled(name)


def cmd_simulate(args):
    path = _config_path(args.config)
    if sc.is_projection(path):
        res = sc.run_projection(path)
        print("local_coincidence_rate,loss_db,visibility_pct,secure_rate")
        print(f"{res.local_coincidence_rate:.6g},{res.loss_db:.4g},{100 * res.visibility:.4g},{res.secure_rate:.6g}")
        return 0
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    res = sc.run_scenario(path, out_dir=args.out, overrides=overrides)
    sys.stdout.write(sc.rows_to_csv([res.table_row()], sc.TABLE_COLUMNS))
    if args.peaks:
        sys.stdout.write(res.peaks_csv())
    return 0


def cmd_analyze(args):
    a, b = load_stream(args.tags_a), load_stream(args.tags_b)
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("tag files must not be empty", "tags")
    duration = max(a.times[-1], b.times[-1]) / 1e12 if args.duration is None else args.duration
    analysis = sc.AnalysisSpec(bin_width=args.bin_width, offset_search=args.offset_search,
                               offset_span=args.offset_span)
    offset, hist, peaks, coinc, key = sc.analyze_streams(a, b, duration, analysis, args.window,
                                                         SecurityParams(ec_inefficiency=args.ec))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "histogram.csv").write_text(hist.to_csv())
        (out / "coincidences.csv").write_text(coinc.to_csv())
    print(f"offset_ps,{offset}")
    print("coincidence_rate,sifted_rate,visibility_pct,qber_pct,secure_rate")
    print(f"{key.coincidence_rate:.6g},{key.sifted_rate:.6g},{100 * key.visibility:.4g},{100 * key.qber:.4g},"
          f"{key.secure_rate:.6g}")
    for p in peaks:
        print(f"peak_ps,{p.center:.1f},{p.weight:.1f}")
    return 0


def cmd_sweep(args):
    table = sc.run_sweep(_config_path(args.config), args.lengths, out_dir=args.out, overrides=_overrides(args.set))
    sys.stdout.write(table.to_csv())
    print(f"# cutoff_km,{table.cutoff():.4g}")
    return 0


def cmd_drift(args):
    path = _config_path(args.config)
    if args.ensemble:
        ens = sc.run_drift_ensemble(path, seeds=range(args.ensemble_start, args.ensemble_start + args.ensemble),
                                    overrides=_overrides(args.set) or None)
        print("t_s,mean_qber_pct,step_tolerance_pct")
        tol = [0.0] + list(ens.step_tolerance())
        for t, q, d in zip(ens.t, ens.mean, tol):
            print(f"{t:.6g},{100 * q:.4g},{100 * d:.3g}")
        return 0
    series = sc.run_drift(path, segment=args.segment, out_dir=args.out, overrides=_overrides(args.set))
    sys.stdout.write(series.to_csv())
    print(f"# mean_qber_pct,{100 * series.mean_qber:.4g}")
    print(f"# mean_secure_rate,{series.mean_secure_rate:.6g}")
    return 0


def cmd_table1(args):
    rows = sc.report_table1(out_dir=args.out, analytic=args.analytic)
    sys.stdout.write(sc.rows_to_csv(rows, sc.TABLE_COLUMNS))
    return 0


def cmd_crossover(args):
    c = crossover_analysis(args.loss810, args.loss1550, args.eff_short, args.eff_long)
    print("breakeven_length_km,breakeven_loss_db")
    print(f"{c.breakeven_length:.4g},{c.breakeven_loss:.4g}")
    return 0


def _hostport(text):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_sync(args):
    from .sync import SocketTransport, run_sync

    stream = load_stream(args.tags)
    kw = dict(resolution=1, bin_width=args.bin_width, search_range=args.offset_search,
              max_span=int(args.max_span * 1e12))
    if args.role == "bob":
        kw = dict(resolution=1)
    if args.listen:
        with socket.create_server(_hostport(args.listen)) as srv:
            srv.settimeout(args.timeout)
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                from .errors import Timeout

                raise Timeout("no peer connected") from None
            transport = SocketTransport(conn, args.timeout)
            try:
                offset = run_sync(args.role, stream, transport, **kw)
            finally:
                transport.close()
    else:
        conn = socket.create_connection(_hostport(args.connect), timeout=args.timeout)
        transport = SocketTransport(conn, args.timeout)
        try:
            offset = run_sync(args.role, stream, transport, **kw)
        finally:
            transport.close()
    print(f"offset_ps,{offset}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qkd810", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario file (or bundled scenario name)")
    s.add_argument("config")
    s.add_argument("--out", help="directory for the configured output artifacts")
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. arm_a.length='3 km'")
    s.add_argument("--peaks", action="store_true", help="also print the detected histogram peaks")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="offset search, histogram and key rate for two tag files")
    s.add_argument("tags_a")
    s.add_argument("tags_b")
    s.add_argument("--window", type=int, default=None, help="coincidence window, ps (default 20000)")
    s.add_argument("--offset-search", type=int, default=50_000, help="search range, ps")
    s.add_argument("--offset-span", type=float, default=1.0, help="seconds of data used for the offset search")
    s.add_argument("--bin-width", type=int, default=100, help="ps")
    s.add_argument("--duration", type=float, help="acquisition time, s (default: last tag time)")
    s.add_argument("--ec", type=float, default=SecurityParams().ec_inefficiency, help="error-correction inefficiency")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="vary Alice's fiber length")
    s.add_argument("config")
    s.add_argument("--lengths", type=float, nargs="+", required=True, metavar="KM")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("drift", help="segmented QBER / key-rate time series")
    s.add_argument("config")
    s.add_argument("--segment", type=float, help="segment length, s")
    s.add_argument("--ensemble", type=int, default=0, metavar="N", help="average N seeds instead")
    s.add_argument("--ensemble-start", type=int, default=0)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_drift)

    s = sub.add_parser("table1", help="six-row summary of the bundled spool scenarios")
    s.add_argument("--out")
    s.add_argument("--analytic", action="store_true", help="closed-form expectations instead of Monte Carlo")
    s.set_defaults(func=cmd_table1)

    s = sub.add_parser("crossover", help="fiber length where 810 nm and 1550 nm links break even")
    s.add_argument("--loss810", type=float, default=3.0, help="dB/km")
    s.add_argument("--loss1550", type=float, default=0.22, help="dB/km")
    s.add_argument("--eff-short", type=float, default=0.70)
    s.add_argument("--eff-long", type=float, default=0.15)
    s.set_defaults(func=cmd_crossover)

    s = sub.add_parser("sync", help="agree on the coincidence offset with a peer over TCP")
    s.add_argument("--role", choices=("alice", "bob"), required=True)
    s.add_argument("--tags", required=True, help="local tag file")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--listen", metavar="HOST:PORT")
    g.add_argument("--connect", metavar="HOST:PORT")
    s.add_argument("--bin-width", type=int, default=100)
    s.add_argument("--offset-search", type=int, default=50_000)
    s.add_argument("--max-span", type=float, default=1.0, help="seconds of Alice's data to correlate")
    s.add_argument("--timeout", type=float, default=30.0)
    s.set_defaults(func=cmd_sync)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Qkd810Error as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
