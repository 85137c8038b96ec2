"""Command line entry point.

    concur-oram serve  [--addr HOST:PORT] [--blocks N --block-size B --round c --parallel-evictions k]
    concur-oram bench  [--clients C] [--ops OPS] [--workload uniform|zipf|trace] [--seed S]
                       [--transport inproc|threads|tcp] [--config FILE] [--out FILE] [key=value ...]
    concur-oram verify [--suite all|linearizability|obliviousness|combinatorics]
                       [--config FILE] [--histories N] [--pairs N] [--mutations] [key=value ...]

Configuration is key=value (one per line in a file, or as arguments; the
arguments win, and the named flags win over both). Keys are the ``SimConfig`` fields, e.g. ``clients=8 c=8
rtt=0.005 transport=tcp``. Reports are printed as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from ..core import MUTATIONS
from .runner import SimConfig, parse_config_text, run_simulation

log = logging.getLogger("concur_oram")


def load_config(path: Optional[str], overrides: List[str], flags: Optional[dict] = None) -> SimConfig:
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for item in overrides:
        if "=" not in item:
            raise SystemExit(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    values.update({k: str(v) for k, v in (flags or {}).items() if v is not None})
    try:
        cfg = SimConfig.from_mapping(values)
        cfg.params()  # validates the geometry
        return cfg
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"bad configuration: {exc}")


def cmd_serve(args) -> int:
    from ..server import ThreadedServer
    from ..wire import TcpServer, parse_addr

    host, port = parse_addr(args.addr)
    oram = ThreadedServer(record=not args.no_record)
    if args.blocks:
        # optional convenience: lay out a fresh ORAM so clients can open it
        # directly; the key is used for this setup only and is not kept
        from ..client import setup_oram
        from ..core import OramParams
        p = OramParams(N=args.blocks, B=args.block_size, c=args.round,
                       k=args.parallel_evictions or args.round)
        setup_oram(oram.transport("setup"), p, args.key.encode())
        log.info("initialized N=%d B=%d c=%d k=%d", p.N, p.B, p.c, p.k)
    srv = TcpServer(oram, host, port)
    log.info("serving on %s:%d", *srv.address)
    print(json.dumps({"listening": "%s:%d" % srv.address}), flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()
    return 0


def cmd_bench(args) -> int:
    flags = {"clients": args.clients, "ops": args.ops, "distribution": args.workload,
             "seed": args.seed, "transport": args.transport}
    cfg = load_config(args.config, args.set, flags)
    res = run_simulation(cfg.replace(record=False) if cfg.transport == "inproc" else cfg)
    out = json.dumps(res.report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    print(out)
    return 0


def cmd_verify(args) -> int:
    from .combinatorics import run_all
    from .fuzz import run_case
    from .verify import checked_run, mutation_drill, shape_pair

    cfg = load_config(args.config, args.set)
    suite = args.suite
    summary = {"suite": suite}
    ok = True
    if suite in ("all", "combinatorics"):
        summary["combinatorics"] = run_all()
        ok = ok and summary["combinatorics"]["ok"]
    if suite in ("all", "linearizability"):
        chk = checked_run(cfg)
        summary["run"] = {"ok": chk.ok, "linearizable": chk.linearizable, "error": chk.error,
                          "violations": chk.violations[:10],
                          "report": chk.result.report if chk.result else None}
        ok = ok and chk.ok
        if args.histories:
            outcomes = [run_case(cfg.seed * 1_000_003 + i) for i in range(args.histories)]
            bad = [o for o in outcomes if not o.ok]
            summary["fuzz"] = {"histories": len(outcomes), "failed": len(bad),
                               "out_of_order_commits": sum(o.out_of_order for o in outcomes),
                               "failures": [{"seed": o.seed, "error": o.error, "reason": o.verdict.reason}
                                            for o in bad[:10]]}
            ok = ok and not bad
    if suite in ("all", "obliviousness"):
        pairs = [shape_pair(cfg.replace(seed=cfg.seed + i)) for i in range(args.pairs)]
        summary["shape_pairs"] = {"pairs": len(pairs), "equal": sum(p.equal for p in pairs),
                                  "first_differences": [p.first_diff for p in pairs if not p.equal][:10]}
        ok = ok and all(p.equal for p in pairs)
        if args.mutations:
            summary["mutations"] = [mutation_drill(m) for m in sorted(MUTATIONS)]
            ok = ok and all(m["detected"] for m in summary["mutations"])
    summary["ok"] = ok
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="concur-oram", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("serve", help="run the storage server over TCP")
    sp.add_argument("--addr", help="HOST:PORT (default $CONCUR_ORAM_ADDR or 127.0.0.1:7707)")
    sp.add_argument("--no-record", action="store_true", help="do not keep a transcript")
    sp.add_argument("--blocks", type=int, help="initialize an ORAM with N blocks")
    sp.add_argument("--block-size", type=int, default=4096)
    sp.add_argument("--round", type=int, default=8, help="query round length c")
    sp.add_argument("--parallel-evictions", type=int, help="k (default c)")
    sp.add_argument("--key", default=SimConfig.key, help="key for the initial setup (aesgcm)")
    sp.set_defaults(fn=cmd_serve)

    for name, fn, help_ in (("bench", cmd_bench, "run a workload and print the report"),
                            ("verify", cmd_verify, "check linearizability, shapes and audits")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("set", nargs="*", help="key=value overrides")
        p.set_defaults(fn=fn)
        if name == "bench":
            p.add_argument("--out", help="also write the JSON report here")
            p.add_argument("--clients", type=int)
            p.add_argument("--ops", type=int)
            p.add_argument("--workload", choices=("uniform", "zipf", "trace"), help="trace reads ids from trace_file=")
            p.add_argument("--seed", type=int)
            p.add_argument("--transport", choices=("inproc", "threads", "tcp"))
        else:
            p.add_argument("--suite", default="all",
                           choices=("all", "linearizability", "obliviousness", "combinatorics"))
            p.add_argument("--histories", type=int, default=0, help="extra fuzzed histories")
            p.add_argument("--pairs", type=int, default=3, help="shape comparison pairs")
            p.add_argument("--mutations", action="store_true", help="run the mutation drills")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
