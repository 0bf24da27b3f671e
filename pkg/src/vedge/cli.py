"""Command line front end and the optional JSON-over-HTTP control endpoint.

Subcommands::

    vedge generate [--preset desk|full] [--out FILE]
    vedge validate SCENARIO
    vedge run SCENARIO [--seed N] [--stepping D] [--out DIR] [--overwrite] [--http HOST:PORT]
    vedge sweep SCENARIO [--seeds 0-9] [--policies ...] [--sizes ...] [--out DIR] [--overwrite]
    vedge report RUN_DIR [--out DIR]

``SCENARIO`` is a TOML file or the name of a built-in preset.  Exit status is
0 on success, 1 for invalid input (bad scenario, output directory already
present) and 2 when the simulation itself fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from pydantic import ValidationError

from .cache import CACHE_POLICIES
from .engine import Simulation
from .metrics import (MetricsFrame, dumps_records, frames_from_events, summary_row,
                      write_summary_csv)
from .scenario import (PRESETS, Scenario, ScenarioError, ScriptedEvent, dumps_scenario,
                       loads_scenario, validate_and_load)

__all__ = ["main", "build_parser", "load_scenario", "run_command", "sweep_command",
           "report_command", "ControlServer", "EXIT_OK", "EXIT_INVALID", "EXIT_RUNTIME"]

log = logging.getLogger("vedge")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

BASELINE_POLICIES = ("lfu", "lru", "clock", "fifo", "random")


class OutputExists(Exception):
    pass


def load_scenario(ref: str) -> Scenario:
    """A scenario file path, or a preset name when no such file exists."""
    p = Path(ref)
    if not p.exists() and ref in PRESETS:
        return PRESETS[ref]()
    return validate_and_load(p)


def _prepare_out(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise OutputExists(f"{out} already exists and is not empty (use --overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _frame_json(frame: MetricsFrame | None):
    return None if frame is None else frame.to_record()


# --------------------------------------------------------------------------
# control endpoint
# --------------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    server: "ControlServer"

    def log_message(self, fmt, *args):  # keep stderr quiet
        log.debug("http: " + fmt, *args)

    def _send(self, code: int, body) -> None:
        data = json.dumps(body, sort_keys=True).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        st = dict(self.server.sim.status)
        if self.path in ("/", "/status"):
            st["frame"] = _frame_json(st.get("frame"))
            self._send(HTTPStatus.OK, st)
        elif self.path == "/metrics":
            self._send(HTTPStatus.OK, {"tick": st["tick"], "frame": _frame_json(st.get("frame"))})
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})

    def do_POST(self):
        sim = self.server.sim
        cmd = self.path.strip("/")
        if cmd not in ("pause", "resume", "inject"):
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            return
        if sim.status.get("finished"):
            self._send(HTTPStatus.CONFLICT, {"error": "run has finished"})
            return
        event = None
        if cmd == "inject":
            n = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(n) or b"{}")
                body.setdefault("tick", 0)  # applied at the next tick boundary
                event = ScriptedEvent.model_validate(body)
            except (json.JSONDecodeError, ValidationError, AttributeError) as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
                return
            if event.rsu is not None and event.rsu >= len(sim.rsus):
                self._send(HTTPStatus.BAD_REQUEST, {"error": f"no RSU with id {event.rsu}"})
                return
        sim.submit(cmd, event)
        self._send(HTTPStatus.ACCEPTED, {"queued": cmd, "tick": sim.status["tick"]})


class ControlServer(ThreadingHTTPServer):
    """Status and control endpoint for one running simulation.

    It only reads ``sim.status`` (replaced wholesale every tick) and writes
    to the simulation's control queue, so commands land between ticks.
    """

    daemon_threads = True

    def __init__(self, sim: Simulation, addr: tuple[str, int]):
        super().__init__(addr, _Handler)
        self.sim = sim
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ControlServer":
        self._thread = threading.Thread(target=self.serve_forever, name="vedge-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def run_command(sc: Scenario, seed: int | None, out_dir, *, overwrite: bool = False,
                http: str | None = None, linger: float = 0.0):
    """Run one simulation and write its report into ``out_dir``."""
    out = Path(out_dir)
    _prepare_out(out, overwrite)
    sim = Simulation(sc, seed)
    server = None
    if http:
        server = ControlServer(sim, _parse_addr(http)).start()
        print(f"control endpoint on {server.url}", file=sys.stderr, flush=True)
    try:
        report = sim.run()
        if server is not None and linger > 0:
            threading.Event().wait(linger)
    finally:
        if server is not None:
            server.stop()
    report.write(out)
    return report


def _expand_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    return seeds


def _sweep_one(args):
    sc, seed = args
    rep = Simulation(sc, seed).run()
    return summary_row(sc.cache.policy, sc.cache.rsu_capacity, seed, rep.final)


def sweep_command(sc: Scenario, seeds, policies, sizes, out_dir, *, overwrite: bool = False,
                  jobs: int = 1) -> list[dict]:
    """Grid of (policy, cache size, seed) runs.

    Writes ``runs.csv`` (one row per run) and ``table.csv`` (per policy and
    size, hit rate / response time / QoS / utilisation averaged over seeds).
    """
    out = Path(out_dir)
    _prepare_out(out, overwrite)
    grid = [(sc.with_updates(cache={"policy": p, "rsu_capacity": float(c)}), s)
            for p in policies for c in sizes for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_sweep_one, grid))
    else:
        rows = [_sweep_one(g) for g in grid]
    (out / "runs.csv").write_text(write_summary_csv(rows))
    (out / "table.csv").write_text(write_summary_csv(table_rows(rows)))
    (out / "scenario.toml").write_text(dumps_scenario(sc))
    return rows


def table_rows(rows) -> list[dict]:
    """Average run rows over seeds; ``seed`` becomes the number of runs."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["policy"], r["cache_size_gb"]), []).append(r)
    out = []
    for (pol, size), rs in groups.items():
        row = {"policy": pol, "cache_size_gb": size, "seed": len(rs)}
        for col in ("hit_rate_pct", "avg_response_time_s", "qos", "space_utilization_pct"):
            vals = [float(r[col]) for r in rs if r[col] != ""]
            row[col] = f"{sum(vals) / len(vals):.4f}" if vals else ""
        out.append(row)
    return out


def report_command(run_dir, out_dir=None) -> list[MetricsFrame]:
    """Re-derive every frame of a finished run from its event log."""
    run = Path(run_dir)
    sc = loads_scenario((run / "scenario.toml").read_text())
    events = [json.loads(line) for line in (run / "events.ndjson").read_text().splitlines() if line]
    frames = frames_from_events(events, sc.metrics)
    if not frames:
        raise ScenarioError([f"{run}: event log has no anchor records"])
    summary = write_summary_csv([summary_row(sc.cache.policy, sc.cache.rsu_capacity, sc.seed,
                                             frames[-1])])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "frames.ndjson").write_text(dumps_records(f.to_record() for f in frames))
        (out / "summary.csv").write_text(summary)
    sys.stdout.write(summary)
    return frames


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vedge", description="Vehicular edge computing simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="emit a scenario skeleton")
    g.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="file to write (default: stdout)")
    g.add_argument("--overwrite", action="store_true")

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")

    def common(p):
        p.add_argument("scenario", help="TOML file or preset name")
        p.add_argument("--stepping", type=int, help="override clock.stepping")
        p.add_argument("--out", required=True)
        p.add_argument("--overwrite", action="store_true")

    r = sub.add_parser("run", help="run one simulation")
    common(r)
    r.add_argument("--seed", type=int)
    r.add_argument("--http", metavar="HOST:PORT", help="serve the status/control endpoint")

    s = sub.add_parser("sweep", help="policy x cache size x seed grid")
    common(s)
    s.add_argument("--seed", type=int, help="single seed (same as --seeds N)")
    s.add_argument("--seeds", default="0-9", help="e.g. 0-9 or 1,4,7")
    s.add_argument("--policies", nargs="+", default=list(BASELINE_POLICIES),
                   choices=sorted(CACHE_POLICIES))
    s.add_argument("--sizes", nargs="+", type=float,
                   help="RSU cache sizes in bytes (default: half, one and two times the "
                        "scenario's capacity)")
    s.add_argument("--jobs", type=int, default=1)

    rp = sub.add_parser("report", help="re-derive metrics from a run's event log")
    rp.add_argument("run_dir")
    rp.add_argument("--out")
    return ap


def _with_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "stepping", None) is not None:
        sc = sc.with_updates(clock={"stepping": args.stepping})
    return sc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "generate":
            sc = PRESETS[args.preset]()
            if args.seed is not None:
                sc = sc.with_updates(seed=args.seed)
            text = dumps_scenario(sc)
            if args.out:
                p = Path(args.out)
                if p.exists() and not args.overwrite:
                    raise OutputExists(f"{p} already exists (use --overwrite)")
                p.write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.cmd == "validate":
            sc = validate_and_load(args.scenario)
            print(f"ok: {sc.name} ({len(sc.events)} scripted events)")
            return EXIT_OK
        if args.cmd == "report":
            report_command(args.run_dir, args.out)
            return EXIT_OK
        sc = _with_overrides(load_scenario(args.scenario), args)
    except (ScenarioError, ValidationError, OutputExists) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    try:
        if args.cmd == "run":
            rep = run_command(sc, args.seed, args.out, overwrite=args.overwrite, http=args.http)
            print(f"{rep.ticks} ticks, hit rate {100 * rep.final.hit_rate:.2f}%, "
                  f"{rep.wall_seconds:.1f}s -> {args.out}")
        else:
            seeds = [args.seed] if args.seed is not None else _expand_seeds(args.seeds)
            cap = sc.cache.rsu_capacity
            sizes = args.sizes or [cap / 2, cap, cap * 2]
            sweep_command(sc, seeds, args.policies, sizes, args.out, overwrite=args.overwrite,
                          jobs=args.jobs)
            sys.stdout.write((Path(args.out) / "table.csv").read_text())
    except OutputExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any engine failure is a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
