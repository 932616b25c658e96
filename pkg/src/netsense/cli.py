"""Command-line entry point: ``netsense {synth,process,analyze,verify,info}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Machine-readable output goes to stdout or files; progress and diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .anonymize import Anonymizer, AnonKey, KeyMaterialError
from .matrix import DEFAULT_WINDOW, MatrixError
from .pcap import IngestError, PcapError
from .pipeline import aggregate, process, resolve_archives, stats_report, verify
from .stats import compute_stats, format_table
from .store import DEFAULT_PER_TAR, FORMAT_VERSION, HEADER_LEN, MatrixFormatError, StoreLayout
from .synth import SynthConfig, generate_pair_arrays, write_pcap

log = logging.getLogger("netsense")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    value = int(text, 0)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _nonnegative(text: str) -> int:
    value = int(text, 0)
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def _add_key_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--key-file", type=Path, help="file holding 64 hex characters")
    group.add_argument("--key-env", metavar="NAME", help="environment variable holding 64 hex characters")


def _load_key(args) -> AnonKey:
    try:
        if args.key_file is not None:
            return AnonKey.from_file(args.key_file)
        return AnonKey.from_env(args.key_env)
    except OSError as exc:
        raise UsageError(f"cannot read key file: {exc.strerror or exc}") from None
    except KeyMaterialError as exc:
        raise UsageError(f"bad key: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic capture")
    p.add_argument("--seed", type=_nonnegative, default=42)
    p.add_argument("--packets", type=_nonnegative, default=1 << 13)
    p.add_argument("--sources", type=_positive, default=1 << 10)
    p.add_argument("--destinations", type=_positive, default=1 << 12)
    p.add_argument("--source-exponent", type=float, default=1.2)
    p.add_argument("--destination-exponent", type=float, default=1.0)
    p.add_argument("--link-type", choices=["ethernet", "raw_ip"], default="ethernet")
    p.add_argument("--timestamp-start", type=_nonnegative, default=1_700_000_000)
    p.add_argument("--inter-packet-micros", type=_nonnegative, default=1000)
    p.add_argument("--noise-fraction", type=float, default=0.0,
                   help="fraction of packets preceded by a non-IPv4 frame")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("process", help="captures -> anonymized traffic-matrix archives")
    p.add_argument("inputs", nargs="+", type=Path)
    _add_key_args(p)
    p.add_argument("--window", type=_positive, default=DEFAULT_WINDOW, help="packets per matrix")
    p.add_argument("--per-tar", type=_positive, default=DEFAULT_PER_TAR, help="matrices per archive")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--report", type=Path, help="also write the ingest report here")
    p.add_argument("--workers", type=_positive, default=os.cpu_count() or 1)

    p = sub.add_parser("analyze", help="sum archived matrices and compute statistics")
    p.add_argument("inputs", nargs="+", type=Path, help="archives or directories of archives")
    p.add_argument("--report", type=Path, help="write the JSON report here instead of stdout")
    p.add_argument("--workers", type=_positive, default=os.cpu_count() or 1)

    p = sub.add_parser("verify", help="pipeline statistics against the brute-force oracle")
    p.add_argument("inputs", nargs="+", type=Path)
    _add_key_args(p)
    p.add_argument("--window", type=_positive, default=DEFAULT_WINDOW)
    p.add_argument("--matrices", nargs="+", type=Path,
                   help="compare against these archives instead of rebuilding in memory")

    sub.add_parser("info", help="format versions and the TMX layout")
    return parser


def cmd_synth(args) -> int:
    try:
        config = SynthConfig(
            seed=args.seed,
            n_packets=args.packets,
            n_sources=args.sources,
            n_destinations=args.destinations,
            source_exponent=args.source_exponent,
            destination_exponent=args.destination_exponent,
            link_type=args.link_type,
            timestamp_start=args.timestamp_start,
            inter_packet_micros=args.inter_packet_micros,
            noise_fraction=args.noise_fraction,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_pcap(generate_pair_arrays(config), config, args.out)
    print(json.dumps({"config": config.as_dict(), "output": str(args.out)}, indent=2))
    return EXIT_OK


def cmd_process(args) -> int:
    anonymizer = Anonymizer.derive(_load_key(args))
    layout = StoreLayout(args.out_dir, args.per_tar)
    result = process(args.inputs, anonymizer, args.window, layout, workers=args.workers)
    doc = result.report.as_dict()
    doc["matrices"] = result.matrix_count
    doc["archives"] = [p.name for p in result.archives]
    text = json.dumps(doc, indent=2) + "\n"
    if args.report:
        args.report.write_text(text)
    sys.stdout.write(text)
    log.info("processed %d packets in %.2fs (%.0f packets/s)",
             result.report.packets_read, result.elapsed, result.packets_per_second)
    return EXIT_OK


def cmd_analyze(args) -> int:
    archives, manifest = resolve_archives(args.inputs)
    total, count = aggregate(archives, workers=args.workers)
    stats = compute_stats(total)
    text = stats_report(stats, window_size=manifest.get("window_size"), matrix_count=count,
                        key_fingerprint=manifest.get("key_fingerprint"))
    if args.report:
        args.report.write_text(text)
        print(format_table(stats))
    else:
        sys.stdout.write(text)
        print(format_table(stats), file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    anonymizer = Anonymizer.derive(_load_key(args))
    archives = None
    if args.matrices:
        archives, _ = resolve_archives(args.matrices)
    result = verify(args.inputs, anonymizer, args.window, archives)
    fields = result.pipeline.as_dict()
    oracle = result.oracle.as_dict()
    doc = {
        "match": result.ok,
        "fields": {k: {"pipeline": fields[k], "oracle": oracle[k]} for k in fields},
        "mismatched": sorted(result.diff()),
    }
    print(json.dumps(doc, indent=2))
    if not result.ok:
        for name, (got, want) in result.diff().items():
            print(f"MISMATCH {name}: pipeline={got} oracle={want}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_info(args) -> int:
    print(f"netsense {__version__}")
    print("capture input : classic pcap (magic a1b2c3d4 / a1b23c4d, either byte order); link types 1, 101")
    print(f"matrix format : TMX1 version {FORMAT_VERSION}, little-endian")
    print(f"  header ({HEADER_LEN} bytes): magic 'TMX1' | version u32 | flags u32 | reserved u32"
          " | window_index u64 (all ones = aggregate) | nnz u64")
    print("  body: nnz x (row u32, col u32, count u64), strictly ascending by (row, col)")
    print("archives      : POSIX ustar, tm_<first>_<last>.tar, members tm_<window:08d>.tmx,"
          " mtime 0, uid/gid 0, mode 0644")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "process": cmd_process,
    "analyze": cmd_analyze,
    "verify": cmd_verify,
    "info": cmd_info,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    logging.captureWarnings(True)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"netsense {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PcapError, IngestError, MatrixError, MatrixFormatError, OSError) as exc:
        print(f"netsense {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.debug("%s finished in %.3fs", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
