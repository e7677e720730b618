"""
Command-line frontend.

    hosd simulate  --out DIR [synthesis options]
    hosd decompose INPUT.csv --out DIR [algorithm options]
    hosd benchmark --out DIR [grid options]
    hosd stream    [gate options] < frames

CSV files hold one record per column and one time sample per row.  Lines
starting with ``#`` are comments; written files open with a ``#`` line
carrying the JSON config echo.  A single non-numeric first row is taken as
a header.  Exit codes: 0 success, 1 usage, 2 I/O or parse error, 3
internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import svd_delays, woody_align
from .decomposition import DecompositionConfig, hosd_decompose
from .delay import IterConfig, iterate_alignment
from .errors import HosdError, InvalidInputError, UndefinedStatisticError
from .hos import NORMALIZATIONS, RecordEnsemble, segment_record
from .streaming import StreamState, push_record
from .synthesis import SynthesisSpec, bandwidth_passband, circular_delay_correlation, simulate, simulate_mixture

log = logging.getLogger("hosd")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
METHODS = ("hosd", "svd", "woody")
WORKERS_ENV = "HOSD_WORKERS"


class UsageError(Exception):
    pass


class ParseError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- CSV I/O

def read_columns(path) -> np.ndarray:
    """Read a CSV of records-as-columns into an (L, T) array."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    rows, width, header_seen = [], None, False
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or (len(row) == 1 and not row[0].strip()) or row[0].lstrip().startswith("#"):
            continue
        try:
            values = [float(v) for v in row]
        except ValueError:
            if not rows and not header_seen:
                header_seen = True
                continue
            col = next(i for i, v in enumerate(row, start=1) if not _is_float(v))
            raise ParseError(f"{path}:{lineno}:{col}: not a number: {row[col - 1]!r}") from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} columns, found {len(values)}")
        bad = [i for i, v in enumerate(values, start=1) if not math.isfinite(v)]
        if bad:
            raise ParseError(f"{path}:{lineno}:{bad[0]}: non-finite value")
        rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float).T


def _is_float(v) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def _echo_line(echo: dict) -> str:
    return "# " + json.dumps(echo, sort_keys=True) + "\n"


def write_columns(path, columns, names, echo: dict):
    """Write ``columns`` (one per entry) as CSV with the echo comment and a header row."""
    data = np.atleast_2d(np.asarray(columns, dtype=float))
    with open(path, "w", newline="") as fh:
        fh.write(_echo_line(echo))
        fh.write(",".join(names) + "\n")
        for row in data.T:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_rows(path, header, rows, echo: dict):
    with open(path, "w", newline="") as fh:
        fh.write(_echo_line(echo))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite_or_none(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------- configs

def _iter_config(args) -> IterConfig:
    return IterConfig(order=args.order, max_iterations=args.max_iter,
                      convergence_fraction=args.convergence_fraction,
                      normalization=args.normalization, delta_w=args.delta_w,
                      bandwidth=args.bandwidth, linear=args.linear)


def _synthesis_spec(args) -> SynthesisSpec:
    passband = tuple(args.passband)
    if args.bandwidth_ratio is not None:
        passband = bandwidth_passband(args.bandwidth_ratio, passband[0])
    return SynthesisSpec(T=args.T, L=args.L, passband=passband, gauss_window_std=args.window_std,
                         inband_snr_db=args.inband_snr, outband_snr_db=args.outband_snr,
                         noise_kind=args.noise_kind, seed=args.seed, outband_mode=args.outband_mode,
                         outband_cutoff=args.outband_cutoff)


def _config_echo(args) -> dict:
    skip = {"func", "verbose"}
    echo = {k: v for k, v in vars(args).items() if k not in skip}
    for k, v in echo.items():
        if isinstance(v, float) and not math.isfinite(v):
            echo[k] = repr(v)
        elif isinstance(v, Path):
            echo[k] = str(v)
    echo["version"] = __version__
    return echo


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParseError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    spec = _synthesis_spec(args)
    if args.sources > 1:
        ens, truth = simulate_mixture(spec, args.sources)
    else:
        ens, truth = simulate(spec)
    out = _out_dir(args)
    echo = _config_echo(args)
    echo["spec"] = spec.to_dict()
    echo["spec"]["inband_snr_db"] = repr(spec.inband_snr_db)
    echo["spec"]["outband_snr_db"] = repr(spec.outband_snr_db)
    write_columns(out / "ensemble.csv", ens.records, [f"r{j}" for j in range(ens.L)], echo)
    rows = [("waveform", i, v) for i, v in enumerate(truth.waveform)]
    rows += [("delay", j, int(d)) for j, d in enumerate(truth.true_delays)]
    if args.sources > 1:
        for k, w in enumerate(truth.extra["waveforms"]):
            rows += [(f"waveform_{k}", i, v) for i, v in enumerate(w)]
        for k, d in enumerate(truth.extra["delays"]):
            rows += [(f"delay_{k}", j, int(v)) for j, v in enumerate(d)]
    rows += [("inband_energy_ratio", 0, truth.inband_energy_ratio),
             ("outband_energy_ratio", 0, truth.outband_energy_ratio)]
    write_rows(out / "truth.csv", ("kind", "index", "value"), rows, echo)
    write_json(out / "spec.json", echo)
    log.info("wrote %d records of %d samples to %s", ens.L, ens.T, out)
    return EXIT_OK


# ---------------------------------------------------------------- decompose

def _load_ensemble(args) -> RecordEnsemble:
    data = read_columns(args.input)
    if args.segment_len is not None:
        if data.shape[0] != 1:
            raise UsageError("--segment-len needs a single-column input")
        return segment_record(data[0], args.segment_len, args.hop, sample_rate=args.sample_rate)
    try:
        return RecordEnsemble(data, sample_rate=args.sample_rate)
    except InvalidInputError as exc:
        raise ParseError(f"{args.input}: {exc}") from exc


def cmd_decompose(args) -> int:
    ens = _load_ensemble(args)
    cfg = DecompositionConfig(max_components=args.max_components, false_positive_rate=args.fp,
                              iteration=_iter_config(args))
    res = hosd_decompose(ens, cfg)
    total = res.reconstruction() + res.residual.records
    if not np.allclose(total, ens.records, rtol=0, atol=1e-9 * max(1.0, float(np.abs(ens.records).max()))):
        raise InvariantError("components plus residual do not reproduce the input")
    out = _out_dir(args)
    echo = _config_echo(args)
    T = ens.T
    comps = res.components
    write_columns(out / "components.csv", [c.waveform for c in comps] or np.zeros((0, T)),
                  [f"c{c.index}" for c in comps], echo)
    write_rows(out / "delays.csv", ["component"] + [f"r{j}" for j in range(ens.L)],
               [[c.index] + [int(v) for v in c.delays.lags] for c in comps], echo)
    write_columns(out / "reconstruction.csv", res.reconstruction(), [f"r{j}" for j in range(ens.L)], echo)
    summary = {
        "config": echo,
        "n_records": ens.L,
        "record_length": T,
        "n_components": len(comps),
        "stop_reason": res.stop_reason,
        "candidate_statistics": [_finite_or_none(s) for s in res.candidate_statistics],
        "components": [{
            "index": c.index,
            "threshold": c.threshold,
            "threshold_flagged": c.threshold_flagged,
            "scale": c.scale,
            "stop_statistic": _finite_or_none(c.stop_statistic),
            "iterations": len(c.changed_counts),
            "changed_counts": c.changed_counts,
        } for c in comps],
    }
    write_json(out / "summary.json", summary)
    log.info("%d components, stop reason %s", len(comps), res.stop_reason)
    return EXIT_OK


# ---------------------------------------------------------------- benchmark

def benchmark_cell(task) -> list[tuple]:
    """Delay correlations of every method on one (levels, seed) task."""
    (inband, outband, ratio, seed, T, L, methods, noise_kind, it_kw) = task
    passband = bandwidth_passband(ratio) if ratio is not None else (0.01, 0.1)
    spec = SynthesisSpec(T=T, L=L, passband=passband, inband_snr_db=inband, outband_snr_db=outband,
                         noise_kind=noise_kind, seed=seed)
    ens, truth = simulate(spec)
    rows = []
    for m in methods:
        if m == "hosd":
            lags = iterate_alignment(ens, IterConfig(**it_kw)).delays.lags
        elif m == "svd":
            lags = svd_delays(ens)
        else:
            lags = woody_align(ens).delays.lags
        try:
            corr = circular_delay_correlation(truth.true_delays, lags, T)
        except UndefinedStatisticError:
            corr = float("nan")
        rows.append((m, inband, outband, ratio, seed, corr))
    return rows


def run_benchmark(inband, outband, ratios, seeds, T=512, L=64, methods=METHODS,
                  noise_kind="gaussian", workers: int = 1, iteration: dict | None = None):
    """Per-seed rows ``(method, inband, outband, ratio, seed, corr)`` sorted by key."""
    it_kw = dict(iteration or {})
    tasks = [(float(i), float(o), r, int(s), T, L, tuple(methods), noise_kind, it_kw)
             for i in inband for o in outband for r in ratios for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(benchmark_cell, tasks))
    else:
        chunks = [benchmark_cell(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2], -1.0 if r[3] is None else r[3], r[4]))
    return rows


def summarize_benchmark(rows) -> list[tuple]:
    """Median and interquartile range of the correlation per (method, levels) cell."""
    cells: dict = {}
    for m, i, o, r, _, c in rows:
        cells.setdefault((m, i, o, r), []).append(c)
    out = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], -1.0 if k[3] is None else k[3])):
        v = np.asarray(cells[key], float)
        v = v[np.isfinite(v)]
        if v.size:
            q25, med, q75 = np.percentile(v, [25, 50, 75])
        else:
            q25 = med = q75 = float("nan")
        out.append(key + (len(cells[key]), float(med), float(q25), float(q75), float(q75 - q25)))
    return out


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return n


def cmd_benchmark(args) -> int:
    methods = args.methods
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise UsageError(f"unknown methods: {sorted(unknown)}")
    ratios = args.bandwidth_ratios or [None]
    seeds = range(args.seed, args.seed + args.seeds)
    rows = run_benchmark(args.inband, args.outband, ratios, seeds, args.T, args.L, methods,
                         args.noise_kind, _workers())
    out = _out_dir(args)
    echo = _config_echo(args)
    fmt = lambda r: "" if r is None else r
    write_rows(out / "runs.csv", ("method", "inband_snr_db", "outband_snr_db", "bandwidth_ratio", "seed",
                                  "delay_correlation"),
               [(m, i, o, fmt(r), s, c) for m, i, o, r, s, c in rows], echo)
    summary = summarize_benchmark(rows)
    write_rows(out / "results.csv", ("method", "inband_snr_db", "outband_snr_db", "bandwidth_ratio", "n",
                                     "median", "q25", "q75", "iqr"),
               [(m, i, o, fmt(r), n, med, q25, q75, iqr) for m, i, o, r, n, med, q25, q75, iqr in summary],
               echo)
    return EXIT_OK


# ---------------------------------------------------------------- stream

def parse_frame(line: str, lineno: int) -> np.ndarray:
    """``n,v1,...,vn`` to a length-n array."""
    parts = [p.strip() for p in line.strip().split(",")]
    try:
        n = int(parts[0])
    except ValueError:
        raise ParseError(f"stdin:{lineno}:1: bad length prefix {parts[0]!r}") from None
    if n != len(parts) - 1:
        raise ParseError(f"stdin:{lineno}: length prefix {n} but {len(parts) - 1} values")
    try:
        x = np.array([float(p) for p in parts[1:]])
    except ValueError:
        col = next(i for i, v in enumerate(parts[1:], start=2) if not _is_float(v))
        raise ParseError(f"stdin:{lineno}:{col}: not a number: {parts[col - 1]!r}") from None
    if not np.all(np.isfinite(x)):
        raise ParseError(f"stdin:{lineno}: non-finite value")
    return x


def cmd_stream(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    state = None
    for lineno, line in enumerate(stdin, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        x = parse_frame(line, lineno)
        if state is None:
            state = StreamState(x.size, bandwidth=args.bandwidth, lam=(0.0, args.lam),
                                alpha=(0.0, args.alpha), theta=args.theta,
                                false_positive_rate=args.fp, buffer_size=args.buffer)
        elif x.size != state.T:
            raise ParseError(f"stdin:{lineno}: frame has {x.size} samples, stream started with {state.T}")
        ev, state = push_record(state, x)
        stdout.write(json.dumps({"index": ev.index, "detected": ev.detected, "lag": ev.lag,
                                 "score": ev.score, "theta": _finite_or_none(ev.theta)}) + "\n")
        stdout.flush()
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _algorithm_options(p):
    p.add_argument("--order", type=int, default=3, choices=(3, 4), help="HOS order K")
    p.add_argument("--normalization", default="magnitude_weighted_bias_corrected", choices=NORMALIZATIONS)
    p.add_argument("--delta-w", type=int, default=1, help="quasi-cumulant window width in bins")
    p.add_argument("--max-iter", type=int, default=25)
    p.add_argument("--convergence-fraction", type=float, default=0.02)
    p.add_argument("--bandwidth", type=int, default=None, help="cap |w| <= W on the HOS grid")
    p.add_argument("--linear", action="store_true", help="zero-pad to 2T for linear shifts")


def _synthesis_options(p):
    p.add_argument("--T", type=int, default=512)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--passband", type=float, nargs=2, default=(0.01, 0.1), metavar=("LOW", "HIGH"))
    p.add_argument("--bandwidth-ratio", type=float, default=None,
                   help="passband width as a multiple of its lower edge (overrides HIGH)")
    p.add_argument("--window-std", type=float, default=20.0)
    p.add_argument("--inband-snr", type=float, default=math.inf)
    p.add_argument("--outband-snr", type=float, default=math.inf)
    p.add_argument("--noise-kind", default="gaussian", choices=("gaussian", "chi2_filtered"))
    p.add_argument("--outband-mode", default="lowpass", choices=("lowpass", "complementary"))
    p.add_argument("--outband-cutoff", type=float, default=0.1)
    p.add_argument("--sources", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hosd", description="Higher-order spectral decomposition of record ensembles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic ensemble and its ground truth")
    _synthesis_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="decompose a CSV ensemble into components")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _algorithm_options(p)
    p.add_argument("--fp", type=float, default=0.05, help="false-positive rate for thresholds")
    p.add_argument("--max-components", type=int, default=8)
    p.add_argument("--segment-len", type=int, default=None,
                   help="segment a single-column record into Hann-tapered windows")
    p.add_argument("--hop", type=int, default=None)
    p.add_argument("--sample-rate", type=float, default=1.0)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("benchmark", help="delay-correlation benchmark over a noise grid")
    p.add_argument("--out", required=True)
    p.add_argument("--inband", type=float, nargs="+", default=[5.0])
    p.add_argument("--outband", type=float, nargs="+", default=[5.0, 0.0, -5.0, -10.0, -15.0])
    p.add_argument("--bandwidth-ratios", type=float, nargs="*", default=None)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--T", type=int, default=512)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--methods", nargs="+", default=list(METHODS))
    p.add_argument("--noise-kind", default="gaussian", choices=("gaussian", "chi2_filtered"))
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("stream", help="running-average detection on framed records from stdin")
    p.add_argument("--theta", type=float, default=None, help="fixed gate threshold (default adaptive)")
    p.add_argument("--lam", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--fp", type=float, default=0.05)
    p.add_argument("--buffer", type=int, default=32)
    p.add_argument("--bandwidth", type=int, default=None)
    p.set_defaults(func=cmd_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hosd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"hosd: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"hosd: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except InvalidInputError as exc:
        print(f"hosd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HosdError as exc:
        print(f"hosd: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"hosd: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
