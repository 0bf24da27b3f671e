"""Time-slice simulation loop.

Each tick runs RSUs, then connections, then vehicles, then services, then
records metric anchors.  Entities of one class run in ascending id order and
all randomness comes from named streams of one master seed, so a (scenario,
seed) pair fully determines the event log.

A task goes through these phases (each logged with its tick count):

``control``  request and decision round trip to the CDC
``fetch``    the target RSU obtains the image (own cache / peer RSU / CDC)
``deploy``   the image is started
``upload``   the vehicle ships the task input
``compute``  queueing plus execution
"""
from __future__ import annotations

import heapq
import logging
import math
import queue
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cache as cachemod
from .cache import deploy_time, make_cache_policy, resolve
from .channel import (draw_fading, find_relay_path, link_rate, mesh_path_time,
                      rtt_backhaul)
from .demand import (HotRanking, ServiceCatalog, select_service,
                     sleep_duration, upload_services)
from .metrics import (MetricsAccumulator, MetricsFrame, dumps_records, summary_row,
                      write_summary_csv)
from .mobility import step_fleet
from .offload import (CdcView, ComputeJob, OffloadDecision, PolicyContext, RsuView, SdvView,
                      TaskRequest, Tier, cdc_terms, decide, get_offload_policy, rsu_terms,
                      time_local, total_task_time)
from .scenario import Scenario, ScriptedEvent, dumps_scenario, scenario_hash
from .synthgen import (generate_feature_vectors, generate_preferences, generate_services,
                       generate_topology)
from .worldmodel import CdcState, Conn, ConnKind, ConnStatus, distance

log = logging.getLogger(__name__)

__all__ = [
    "SimClock",
    "RngStreams",
    "STREAMS",
    "Task",
    "Simulation",
    "RunReport",
    "apply_stepping",
    "run",
]

STREAMS = ("topology", "services", "fading", "demand", "mobility", "policy")


@dataclass
class SimClock:
    dt: float = 0.1
    stepping: int = 1
    horizon: int = 2000
    tick: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.stepping < 1:
            raise ValueError("stepping must be >= 1")
        if self.horizon < 0 or not 0 <= self.tick <= self.horizon:
            raise ValueError("need 0 <= tick <= horizon")

    @property
    def time(self) -> float:
        return self.tick * self.dt

    @property
    def done(self) -> bool:
        return self.tick >= self.horizon


def apply_stepping(clock: SimClock, what: str = "") -> bool:
    """Whether the expensive recomputations run on this tick."""
    return clock.tick % clock.stepping == 0


class RngStreams:
    """Independent generators keyed by name.

    Stream ``name`` is seeded from ``SeedSequence(master, spawn_key=(k,))``
    with ``k`` its fixed index, so adding draws to one stream never shifts
    another.
    """

    def __init__(self, seed: int, names=STREAMS):
        self.seed = int(seed)
        self._gens = {
            name: np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(self.seed, spawn_key=(i,))))
            for i, name in enumerate(names)
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._gens[name]

    def keyed(self, name: str, *key: int) -> np.random.Generator:
        """Fresh generator for sub-key ``key`` of stream ``name``.

        Used for draws that must not depend on how often they are taken,
        e.g. per-epoch drift noise under different stepping.
        """
        i = STREAMS.index(name)
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(self.seed, spawn_key=(i, 1) + tuple(int(k) for k in key))))

    def __getattr__(self, name: str) -> np.random.Generator:
        try:
            return self.__dict__["_gens"][name]
        except KeyError:
            raise AttributeError(name) from None


@dataclass
class Task:
    id: int
    req: TaskRequest
    decision: OffloadDecision
    hop: int | None
    deadline: int
    policy_ok: bool = True
    target: int | None = None
    phase: str = "issued"
    phase_start: int = 0
    phases: dict = field(default_factory=dict)
    status: str = "inflight"
    reason: str | None = None
    conns: set = field(default_factory=set)
    analytic: float | None = None
    fetch_estimate: float | None = None
    outcome: str | None = None
    pins: list = field(default_factory=list)  # (store, sid)

    @property
    def attributed_rsu(self) -> int | None:
        if self.decision.tier is Tier.RSU:
            return self.target
        if self.decision.tier is Tier.CDC:
            return self.hop
        return None


@dataclass(frozen=True)
class RunReport:
    scenario: Scenario
    scenario_hash: str
    seed: int
    frames: tuple
    events: tuple
    ticks: int
    wall_seconds: float = field(default=0.0, compare=False)

    @property
    def final(self) -> MetricsFrame:
        return self.frames[-1]

    def events_ndjson(self) -> str:
        return dumps_records(self.events)

    def frames_ndjson(self) -> str:
        return dumps_records(f.to_record() for f in self.frames)

    def summary_csv(self) -> str:
        sc = self.scenario
        return write_summary_csv([summary_row(sc.cache.policy, sc.cache.rsu_capacity,
                                              self.seed, self.final)])

    def write(self, out_dir) -> list[Path]:
        """Write the report files into ``out_dir`` (created if missing)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "events.ndjson": self.events_ndjson(),
            "frames.ndjson": self.frames_ndjson(),
            "summary.csv": self.summary_csv(),
            "scenario.toml": dumps_scenario(self.scenario),
            "run.json": dumps_records([{"seed": self.seed, "scenario_hash": self.scenario_hash,
                                        "ticks": self.ticks}]),
        }
        paths = []
        for name, text in files.items():
            p = out / name
            p.write_text(text)
            paths.append(p)
        return paths


class Simulation:
    """One seeded run of a scenario.

    The loop is single-threaded.  Other threads may only call
    :meth:`submit` (control queue, drained between ticks) and read
    :attr:`status` (an immutable snapshot replaced once per tick).
    """

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = sc = scenario
        self.seed = sc.seed if seed is None else int(seed)
        self.rng = RngStreams(self.seed)
        self.clock = SimClock(sc.clock.dt, sc.clock.stepping, sc.clock.horizon)
        self.chan = sc.channel
        self.dparams = sc.demand
        self.mparams = sc.mobility
        self.cparams = sc.cache

        g = sc.gen
        self.centers, vectors, labels = generate_feature_vectors(g, self.rng.services)
        self.catalog = ServiceCatalog(generate_services(g, self.rng.services, vectors, labels))
        self.rsus, self.sdvs = generate_topology(g, self.rng.topology,
                                                 rsu_cache_bytes=sc.cache.rsu_capacity)
        self.cdc = CdcState(disk=self.catalog.services, compute_capacity=sc.cdc.compute,
                            position=(0.0, -sc.cdc.distance))
        n = len(self.sdvs)
        prefs, _ = generate_preferences(self.centers, n, g.dispersion, self.rng.demand)
        self.prefs = prefs
        for i, v in enumerate(self.sdvs):
            v.preference = self.prefs[i]
        self.pos = np.array([v.position for v in self.sdvs], dtype=float).reshape(n, 2)
        v0 = sc.mobility.initial_speed
        self.speed = np.full(n, sc.mobility.target_speed if v0 is None else v0)
        self.heading = self.rng.mobility.uniform(0, 2 * math.pi, n)
        self.accel = np.zeros(n)
        for i, v in enumerate(self.sdvs):
            v.velocity, v.heading = float(self.speed[i]), float(self.heading[i])
        # stagger first requests over one typical sleep
        for v in self.sdvs:
            v.sleeping_until = int(self.rng.demand.uniform() * sleep_duration(v, self.dparams,
                                                                              self.rng.demand,
                                                                              self.clock.dt))
        self.rsu_pos = np.array([r.position for r in self.rsus], dtype=float).reshape(-1, 2)
        self.rsu_cov = np.array([r.coverage_radius for r in self.rsus], dtype=float)
        self._dist = None

        self.offload_policy = get_offload_policy(sc.offload.policy)
        self.rsu_policy = make_cache_policy(sc.cache.policy, self.rng.policy)
        self.sdv_policy = make_cache_policy(sc.cache.sdv_policy, self.rng.policy)

        self.hot = HotRanking(self.dparams)
        self._drift_upto = 0
        self._n_issued = [0] * len(self.sdvs)
        self.events: list[dict] = []
        self.tasks: dict[int, Task] = {}
        self.conns: dict[int, Conn] = {}
        self.conn_task: dict[int, int] = {}
        self._next_task = 0
        self._next_conn = 0
        self._deadlines: list = []
        self.inbox = {r.id: [] for r in self.rsus}
        self.deploying = {r.id: {} for r in self.rsus}
        self.jobs: dict[int, ComputeJob] = {}
        self.cdc_jobs: dict[int, ComputeJob] = {}
        self.sdv_jobs: dict[int, tuple] = {}      # task -> (sdv id, job)
        self.sdv_deploys: dict[int, float] = {}
        self.n_tx = {r.id: 0 for r in self.rsus}
        self.busy = {r.id: 0.0 for r in self.rsus}
        self.radio_s = {r.id: 0.0 for r in self.rsus}
        self.energy = {r.id: 0.0 for r in self.rsus}
        self.acc = MetricsAccumulator([r.id for r in self.rsus], [r.tx_power for r in self.rsus],
                                      sc.metrics)
        self.frames: list[MetricsFrame] = []
        self.workload_paused = False
        self.trend = (1.0, -1)
        self.scripted = sorted(enumerate(sc.events), key=lambda p: (p[1].tick, p[0]))
        self._next_scripted = 0
        self.control: queue.SimpleQueue = queue.SimpleQueue()
        self.paused = False
        self.finished = False
        self.status: dict = {}
        self._components = None
        self._publish()

    # ------------------------------------------------------------------
    # bookkeeping helpers
    # ------------------------------------------------------------------

    def emit(self, rec: dict) -> None:
        self.events.append(rec)

    def _new_conn(self, task: Task | None, kind: ConnKind, a, b, nbytes: float, *,
                  prop: float = 0.0, computes: bool = False, radio: int | None = None,
                  on_done=()) -> Conn:
        c = Conn(self._next_conn, kind, (a, b), float(nbytes), self.clock.tick,
                 prop_remaining=prop, computes=computes, radio=radio, events=list(on_done))
        if kind in (ConnKind.V2R, ConnKind.R2R, ConnKind.V2V):
            c.fading = float(draw_fading(self.rng.fading, 1, self.chan.fading_scale)[0])
        self._next_conn += 1
        self.conns[c.id] = c
        if task is not None:
            task.conns.add(c.id)
            self.conn_task[c.id] = task.id
        return c

    def _distances(self) -> np.ndarray:
        if self._dist is None:
            d = self.pos[:, None, :] - self.rsu_pos[None, :, :]
            self._dist = np.hypot(d[..., 0], d[..., 1])
        return self._dist

    def _sdv_in_range(self, vid: int, rid: int) -> bool:
        return self.rsus[rid].alive and self._distances()[vid, rid] < self.rsu_cov[rid]

    def best_hop(self, vid: int) -> int | None:
        """Nearest live RSU covering the vehicle (strongest link); lower id on ties."""
        d = self._distances()[vid]
        best = None
        for r in self.rsus:
            if r.alive and d[r.id] < r.coverage_radius and (best is None or d[r.id] < d[best]):
                best = r.id
        return best

    def _relay(self, src: int, dst: int):
        return find_relay_path(self.rsus[src], self.rsus[dst], self.rsus)

    def _set_phase(self, task: Task, phase: str) -> None:
        t = self.clock.tick
        if task.phase != "issued":
            task.phases[task.phase] = task.phases.get(task.phase, 0) + t - task.phase_start
        task.phase, task.phase_start = phase, t
        self.emit({"type": "phase", "tick": t, "task": task.id, "phase": phase})

    def _release(self, task: Task) -> None:
        for store, sid in task.pins:
            store.unpin(sid)
        task.pins.clear()

    def _close(self, task: Task) -> None:
        t = self.clock.tick
        if task.phase != "issued":
            task.phases[task.phase] = task.phases.get(task.phase, 0) + t - task.phase_start
        rec = {"type": "task", "tick": t, "task": task.id, "sdv": task.req.origin_sdv,
               "service": task.req.service_id, "tier": task.decision.tier.value,
               "rsu": task.attributed_rsu, "status": task.status, "reason": task.reason,
               "latency": (t - task.req.issue_tick) * self.clock.dt if task.status == "finished" else None,
               "size": task.req.size, "phases": dict(task.phases), "analytic": task.analytic,
               "fetch_estimate": task.fetch_estimate, "cache": task.outcome}
        self.emit(rec)
        self.acc.on_task(rec)
        del self.tasks[task.id]

    def finish_task(self, task: Task) -> None:
        if task.status != "inflight":
            return
        if (self.clock.tick - task.req.issue_tick) * self.clock.dt > task.req.timeout + 1e-9:
            self.fail_task(task, "timeout")
            return
        task.status = "finished"
        self._release(task)
        self._close(task)

    def fail_task(self, task: Task, reason: str) -> None:
        if task.status != "inflight":
            return
        task.status, task.reason = "failed", reason
        for cid in sorted(task.conns):
            c = self.conns.pop(cid, None)
            if c is not None:
                c.fail(reason)
            self.conn_task.pop(cid, None)
        task.conns.clear()
        tid = task.id
        for rid in self.inbox:
            if tid in self.inbox[rid]:
                self.inbox[rid].remove(tid)
            self.deploying[rid].pop(tid, None)
        job = self.jobs.pop(tid, None)
        if job is not None:
            for r in self.rsus:
                if job in r.running_tasks:
                    r.running_tasks.remove(job)
                    self._fill_slots(r)
                elif job in r.queue:
                    r.queue.remove(job)
        if self.cdc_jobs.pop(tid, None) is not None:
            self.cdc.active_tasks = len(self.cdc_jobs)
        self.sdv_jobs.pop(tid, None)
        self.sdv_deploys.pop(tid, None)
        self._release(task)
        self._close(task)

    # ------------------------------------------------------------------
    # policy context
    # ------------------------------------------------------------------

    def _components_of(self):
        if self._components is None:
            comp = {}
            for r in self.rsus:
                if not r.alive or r.id in comp:
                    continue
                stack, comp[r.id] = [r.id], r.id
                while stack:
                    a = stack.pop()
                    for b in self.rsus:
                        if b.alive and b.id not in comp and \
                                distance(self.rsus[a], b) < min(self.rsus[a].coverage_radius,
                                                                b.coverage_radius):
                            comp[b.id] = r.id
                            stack.append(b.id)
            self._components = comp
        return self._components

    def context(self, vid: int, hop: int | None) -> PolicyContext:
        v = self.sdvs[vid]
        d = self._distances()[vid]
        comp = self._components_of()
        views = []
        for r in self.rsus:
            inr = bool(r.alive and d[r.id] < r.coverage_radius)
            reach = inr or (hop is not None and r.alive and comp.get(r.id) == comp.get(hop))
            rate = link_rate(v, r, self.chan, self.chan.fading_scale) / (self.n_tx[r.id] + 1)
            views.append(RsuView(
                id=r.id, position=r.position, coverage_radius=r.coverage_radius,
                compute_capacity=r.compute_capacity, concurrency_limit=r.concurrency_limit,
                tx_power=r.tx_power, running_tasks=tuple(r.running_tasks), queue=tuple(r.queue),
                n_transmitting=self.n_tx[r.id], cached=frozenset(r.cache.entries),
                cache_free=r.cache.free_bytes, alive=r.alive, backhaul_up=r.backhaul_up,
                distance=float(d[r.id]), in_range=inr, reachable=bool(reach), est_rate=rate,
                rtt=rtt_backhaul(r, self.cdc, self.chan),
                load=len(r.running_tasks) / r.concurrency_limit))
        sv = SdvView(id=v.id, position=v.position, compute_capacity=v.compute_capacity,
                     tx_power=v.tx_power, cache_capacity=v.cache.capacity_bytes,
                     cache_free=v.cache.free_bytes, cached=frozenset(v.cache.entries), hop=hop)
        cv = CdcView(self.cdc.compute_capacity, self.cdc.active_tasks, self.cdc.position)
        return PolicyContext(self.clock.tick, self.clock.dt, sv, tuple(views), cv, self.chan)

    def _analytic(self, ctx: PolicyContext, task: TaskRequest, d: OffloadDecision) -> float | None:
        try:
            if d.tier is Tier.LOCAL:
                terms = {"compute": time_local(task, ctx.sdv)}
            elif d.tier is Tier.RSU:
                r = ctx.rsus[d.rsu_id]
                relay = 0.0
                if not r.in_range and ctx.hop is not None:
                    path = self._relay(ctx.hop.id, r.id)
                    relay = mesh_path_time(path, task.size, self.chan) if path else 0.0
                rate = r.est_rate if r.in_range else (ctx.hop.est_rate if ctx.hop else 0.0)
                terms = rsu_terms(task, r, rate, relay)
            else:
                hop = ctx.hop
                if hop is None:
                    return None
                terms = cdc_terms(task, ctx.cdc, hop, hop.est_rate, self.chan)
            return total_task_time(d, terms)
        except (ValueError, ZeroDivisionError):
            return None

    # ------------------------------------------------------------------
    # control surface
    # ------------------------------------------------------------------

    def submit(self, command: str, event: ScriptedEvent | None = None) -> None:
        """Queue ``pause`` / ``resume`` / ``inject`` from any thread."""
        if command not in ("pause", "resume", "inject", "stop"):
            raise ValueError(f"unknown control command {command!r}")
        self.control.put((command, event))

    def _drain_control(self) -> bool:
        """Apply queued commands; blocks while paused.  False means stop."""
        while True:
            try:
                cmd, ev = self.control.get(block=self.paused, timeout=None if not self.paused else 0.05)
            except queue.Empty:
                if self.paused:
                    continue
                return True
            if cmd == "pause":
                self.paused = True
                self.emit({"type": "control", "tick": self.clock.tick, "command": "pause",
                           "source": "endpoint"})
                self._publish()
            elif cmd == "resume":
                self.paused = False
                self.emit({"type": "control", "tick": self.clock.tick, "command": "resume",
                           "source": "endpoint"})
                self._publish()
            elif cmd == "inject":
                self._apply_event(ev, "endpoint")
            elif cmd == "stop":
                return False

    def _apply_event(self, ev: ScriptedEvent, source: str) -> None:
        t = self.clock.tick
        rec = {"type": "control", "tick": t, "command": ev.command, "source": source}
        rec.update({k: v for k, v in ev.to_record().items() if k not in ("tick", "command")})
        self.emit(rec)
        if ev.command == "pause":
            self.workload_paused = True
        elif ev.command == "resume":
            self.workload_paused = False
        elif ev.command == "trend_burst":
            self.trend = (ev.multiplier, t + ev.duration)
        elif ev.command == "inject_services":
            new = upload_services(self.catalog, self.centers, self.scenario.gen, self.dparams,
                                  self.rng.services, t, count=ev.count, cluster=ev.cluster)
            self.emit({"type": "upload", "tick": t, "services": [s.id for s in new]})
        elif ev.command == "kill_rsu":
            r = self.rsus[ev.rsu]
            if r.alive:
                r.alive = False
                self._components = None
                for task in sorted(self.tasks.values(), key=lambda x: x.id):
                    if ev.rsu in (task.hop, task.target) or any(
                            self.conns[c].radio == ev.rsu for c in task.conns if c in self.conns):
                        self.fail_task(task, "rsu_down")
        elif ev.command == "revive_rsu":
            if not self.rsus[ev.rsu].alive:
                self.rsus[ev.rsu].alive = True
                self._components = None

    def _publish(self) -> None:
        f = self.frames[-1] if self.frames else None
        self.status = {
            "tick": self.clock.tick, "horizon": self.clock.horizon, "paused": self.paused,
            "finished": self.finished, "workload_paused": self.workload_paused,
            "entities": {"sdv": len(self.sdvs), "rsu": len(self.rsus),
                         "services": len(self.catalog), "conns": len(self.conns),
                         "tasks_in_flight": len(self.tasks)},
            "issued": self.acc.issued, "completed": self.acc.completed, "failed": self.acc.failed,
            "frame": f,
        }

    # ------------------------------------------------------------------
    # RSU tick
    # ------------------------------------------------------------------

    def _fill_slots(self, r) -> None:
        while r.queue and len(r.running_tasks) < r.concurrency_limit:
            r.running_tasks.append(r.queue.pop(0))

    def rsu_tick(self) -> None:
        dt = self.clock.dt
        # CDC work shares the datacentre fairly
        if self.cdc_jobs:
            share = self.cdc.compute_capacity / len(self.cdc_jobs) * dt
            for tid in sorted(self.cdc_jobs):
                job = self.cdc_jobs[tid]
                job.flops_left -= share
                if job.flops_left <= 1e-9 * job.flops_total:
                    del self.cdc_jobs[tid]
                    self._job_done(tid)
            self.cdc.active_tasks = len(self.cdc_jobs)
        for r in self.rsus:
            if not r.alive:
                continue
            self.busy[r.id] += len(r.running_tasks) / r.concurrency_limit * dt
            step = r.compute_capacity * dt
            done = []
            for job in r.running_tasks:
                job.flops_left -= step
                if job.flops_left <= 1e-9 * job.flops_total:
                    done.append(job)
            for job in done:
                r.running_tasks.remove(job)
                self.jobs.pop(job.task_id, None)
                self._job_done(job.task_id)
            self._fill_slots(r)
            deps = self.deploying[r.id]
            for tid in list(deps):
                deps[tid] -= dt
                if deps[tid] <= 1e-12:
                    del deps[tid]
                    self._start_upload(self.tasks[tid])
            box, self.inbox[r.id] = self.inbox[r.id], []
            for tid in box:
                task = self.tasks.get(tid)
                if task is not None:
                    self._intake(r, task)
            r.check_invariants()

    def _job_done(self, tid: int) -> None:
        task = self.tasks.get(tid)
        if task is None:
            return
        for cid in sorted(task.conns):
            c = self.conns.get(cid)
            if c is not None and c.status is ConnStatus.COMPUTING:
                c.transition(ConnStatus.FINISHED)
                self.conns.pop(cid)
                self.conn_task.pop(cid, None)
        task.conns.clear()
        self.finish_task(task)

    def _intake(self, r, task: Task) -> None:
        """Cache check at the target RSU, then arrange the image transfer."""
        req = task.req
        res = resolve(r, req.service_id, req.size, self.rsus, self.cdc, self.chan,
                      self.clock.tick, self.rsu_policy, deploy_rate=self.cparams.deploy_rate,
                      reach=self.cparams.collab_reach)
        rec = res.event.to_record()
        rec["task"] = task.id
        self.emit(rec)
        self.acc.on_cache(r.id, res.outcome)
        task.outcome, task.fetch_estimate = res.outcome, res.fetch_time
        self._set_phase(task, "fetch")
        sid = req.service_id
        if res.event.admitted:
            r.cache.pin(sid)
            task.pins.append((r.cache, sid))
        if res.outcome == cachemod.HIT:
            self._start_deploy(task)
        elif res.outcome == cachemod.PEER:
            peer = self.rsus[res.source]
            peer.cache.pin(sid)
            task.pins.append((peer.cache, sid))
            self._relay_hop(task, res.path, 0)
        else:
            self._new_conn(task, ConnKind.R2C, ("cdc", 0), ("rsu", r.id), req.size,
                           prop=rtt_backhaul(r, self.cdc, self.chan),
                           on_done=[("fetched", task.id)])

    def _relay_hop(self, task: Task, path, k: int) -> None:
        a, b = path[k]
        self._new_conn(task, ConnKind.R2R, ("rsu", a.id), ("rsu", b.id), task.req.size,
                       prop=distance(a, b) / self.chan.prop_speed, radio=a.id,
                       on_done=[("relay", task.id, tuple((x.id, y.id) for x, y in path), k + 1)])

    def _start_deploy(self, task: Task) -> None:
        self._release(task)
        self._set_phase(task, "deploy")
        t = deploy_time(task.req.size, self.cparams.deploy_rate)
        if task.decision.tier is Tier.LOCAL:
            self.sdv_deploys[task.id] = t
        else:
            self.deploying[task.target][task.id] = t

    def _start_upload(self, task: Task) -> None:
        """The vehicle sends the task input to the execution RSU."""
        self._set_phase(task, "upload")
        vid = task.req.origin_sdv
        target = task.target
        if self._sdv_in_range(vid, target):
            radio, extra = target, 0.0
        else:
            radio = self.best_hop(vid)
            path = self._relay(radio, target) if radio is not None else None
            if path is None:
                self.fail_task(task, "range")
                return
            extra = mesh_path_time(path, task.req.size, self.chan)
        c = self._new_conn(task, ConnKind.V2R, ("sdv", vid), ("rsu", target), task.req.size,
                           prop=distance(self.sdvs[vid], self.rsus[radio]) / self.chan.prop_speed,
                           computes=True, radio=radio, on_done=[("rsu_compute", task.id)])
        c.extra_delay = extra

    # ------------------------------------------------------------------
    # connection tick
    # ------------------------------------------------------------------

    def _wireless_rate(self, c: Conn) -> float:
        (ka, a), (kb, b) = c.endpoints
        if c.kind is ConnKind.R2R:
            return link_rate(self.rsus[a], self.rsus[b], self.chan, c.fading, "R2R")
        vid = a if ka == "sdv" else b
        # same formula as channel.link_rate, reading the per-tick distance matrix
        ch = self.chan
        d = max(float(self._distances()[vid, c.radio]), ch.min_distance)
        p = min(self.sdvs[vid].tx_power, self.rsus[c.radio].tx_power)
        return ch.bandwidth * math.log2(1.0 + p * d ** -ch.pathloss_exp * c.fading / ch.noise)

    def _check_range(self, c: Conn) -> bool:
        """Reroute or fail a vehicle link whose radio RSU fell out of range."""
        (ka, a), (kb, b) = c.endpoints
        if c.kind is not ConnKind.V2R:
            return True
        vid, rid = (a, b) if ka == "sdv" else (b, a)
        if self._sdv_in_range(vid, c.radio):
            return True
        hop = self.best_hop(vid)
        path = None
        if hop is not None:
            path = [] if hop == rid else self._relay(hop, rid)
        task = self.tasks.get(self.conn_task.get(c.id))
        if path is None:
            if task is not None:
                self.fail_task(task, "range")
            else:
                c.fail("range")
            return False
        c.radio = hop
        c.extra_delay = mesh_path_time(path, c.remaining_bytes, self.chan) if path else 0.0
        self.emit({"type": "reroute", "tick": self.clock.tick, "conn": c.id,
                   "task": self.conn_task.get(c.id), "radio": hop, "hops": len(path)})
        return True

    def conn_tick(self) -> None:
        dt = self.clock.dt
        if apply_stepping(self.clock) and self.clock.tick % self.chan.resample_fading_every == 0:
            wl = [c for c in self.conns.values() if c.kind is not ConnKind.R2C]
            if wl:
                gains = draw_fading(self.rng.fading, len(wl), self.chan.fading_scale)
                for c, g in zip(wl, gains):
                    c.fading = float(g)
        avail = {}
        for cid in list(self.conns):
            c = self.conns.get(cid)
            if c is None:
                continue
            if c.status is ConnStatus.PENDING:
                c.transition(ConnStatus.ESTABLISHED)
            if c.status is ConnStatus.ESTABLISHED:
                c.prop_remaining -= dt
                if c.prop_remaining > 1e-12:
                    continue
                c.transition(ConnStatus.TRANSMITTING)
                avail[cid] = min(dt, -c.prop_remaining) if c.prop_remaining < 0 else 0.0
                if c.remaining_bytes > 0 and avail[cid] == 0.0:
                    avail[cid] = 0.0
                continue
            if c.status is ConnStatus.TRANSMITTING:
                avail[cid] = dt
        # rate pass: wireless links share their radio equally
        n_tx = {r.id: 0 for r in self.rsus}
        live = []
        for cid in sorted(avail):
            c = self.conns.get(cid)
            if c is None or c.status is not ConnStatus.TRANSMITTING:
                continue
            if not self._check_range(c):
                continue
            live.append(c)
            if c.kind is not ConnKind.R2C and c.remaining_bytes > 0:
                n_tx[c.radio] += 1
        self.n_tx = n_tx
        for r in self.rsus:
            if n_tx[r.id]:
                self.radio_s[r.id] += dt
                self.energy[r.id] += r.tx_power * dt
        finished = []
        for c in live:
            t_av = avail[c.id]
            if c.remaining_bytes > 0:
                if c.kind is ConnKind.R2C:
                    rate = self.chan.backhaul_rate
                else:
                    rate = self._wireless_rate(c) / n_tx[c.radio]
                need = 8.0 * c.remaining_bytes / rate if rate > 0 else math.inf
                if need <= t_av:
                    c.drain(c.remaining_bytes)
                    t_av -= need
                else:
                    c.drain(rate * t_av / 8.0)
                    t_av = 0.0
            if c.remaining_bytes == 0 and c.extra_delay > 0:
                used = min(c.extra_delay, t_av)
                c.extra_delay -= used
                t_av -= used
                if c.extra_delay <= 1e-12:
                    c.extra_delay = 0.0
            if c.remaining_bytes == 0 and c.extra_delay == 0:
                c.transition(ConnStatus.COMPUTING if c.computes else ConnStatus.FINISHED)
                finished.append(c)
        for c in finished:
            if c.status is ConnStatus.FINISHED:
                self.conns.pop(c.id, None)
                tid = self.conn_task.pop(c.id, None)
                if tid in self.tasks:
                    self.tasks[tid].conns.discard(c.id)
            for ev in c.events:
                self._dispatch(c, ev)

    def _dispatch(self, c: Conn, ev: tuple) -> None:
        kind, tid = ev[0], ev[1]
        task = self.tasks.get(tid)
        if task is None or task.status != "inflight":
            return
        if kind == "control_done":
            self._after_control(task)
        elif kind == "fetched":
            self._start_deploy(task)
        elif kind == "relay":
            hops, k = ev[2], ev[3]
            if k < len(hops):
                path = [(self.rsus[a], self.rsus[b]) for a, b in hops]
                self._relay_hop(task, path, k)
            else:
                self._start_deploy(task)
        elif kind == "rsu_compute":
            self._set_phase(task, "compute")
            r = self.rsus[task.target]
            job = ComputeJob(task.id, task.req.cpu, task.req.cpu)
            self.jobs[task.id] = job
            if len(r.running_tasks) < r.concurrency_limit:
                r.running_tasks.append(job)
            else:
                r.queue.append(job)
        elif kind == "cdc_upload_done":
            hop = self.rsus[task.hop]
            self._set_phase(task, "compute")
            self._new_conn(task, ConnKind.R2C, ("rsu", hop.id), ("cdc", 0), 0.0,
                           prop=rtt_backhaul(hop, self.cdc, self.chan), computes=True,
                           on_done=[("cdc_compute", task.id)])
        elif kind == "cdc_compute":
            self.cdc_jobs[task.id] = ComputeJob(task.id, task.req.cpu, task.req.cpu)
            self.cdc.active_tasks = len(self.cdc_jobs)
        elif kind == "sdv_fetched":
            v = self.sdvs[task.req.origin_sdv]
            ok, _ = cachemod.admit(self.sdv_policy, v.cache, task.req.service_id, task.req.size,
                                   self.clock.tick)
            self._start_deploy(task)

    def _after_control(self, task: Task) -> None:
        tier = task.decision.tier
        vid = task.req.origin_sdv
        if tier is Tier.RSU:
            self.inbox[task.target].append(task.id)
            return
        if tier is Tier.CDC:
            hop = self.best_hop(vid)
            if hop is None:
                self.fail_task(task, "range")
                return
            task.hop = hop
            self._set_phase(task, "upload")
            self._new_conn(task, ConnKind.V2R, ("sdv", vid), ("rsu", hop), task.req.size,
                           prop=distance(self.sdvs[vid], self.rsus[hop]) / self.chan.prop_speed,
                           radio=hop, on_done=[("cdc_upload_done", task.id)])
            return
        self._local_fetch(task)

    def _local_fetch(self, task: Task) -> None:
        v = self.sdvs[task.req.origin_sdv]
        sid = task.req.service_id
        self._set_phase(task, "fetch")
        if cachemod.lookup(v.cache, sid, self.clock.tick):
            task.outcome = "sdv_hit"
            self._start_deploy(task)
            return
        hop = self.best_hop(v.id)
        if hop is None:
            self.fail_task(task, "range")
            return
        task.outcome = "sdv_miss"
        self._new_conn(task, ConnKind.V2R, ("rsu", hop), ("sdv", v.id), task.req.size,
                       prop=rtt_backhaul(self.rsus[hop], self.cdc, self.chan), radio=hop,
                       on_done=[("sdv_fetched", task.id)])

    # ------------------------------------------------------------------
    # SDV tick
    # ------------------------------------------------------------------

    def sdv_tick(self) -> None:
        clk = self.clock
        dt, t = clk.dt, clk.tick
        stepped = apply_stepping(clk)
        # local execution
        for tid in list(self.sdv_deploys):
            self.sdv_deploys[tid] -= dt
            if self.sdv_deploys[tid] <= 1e-12:
                del self.sdv_deploys[tid]
                task = self.tasks[tid]
                self._set_phase(task, "compute")
                self.sdv_jobs[tid] = (task.req.origin_sdv,
                                      ComputeJob(tid, task.req.cpu, task.req.cpu))
        for tid in list(self.sdv_jobs):
            vid, job = self.sdv_jobs[tid]
            job.flops_left -= self.sdvs[vid].compute_capacity * dt
            if job.flops_left <= 1e-9 * job.flops_total:
                del self.sdv_jobs[tid]
                self.finish_task(self.tasks[tid])
        if not self.sdvs:
            return
        if not self.workload_paused:
            self.pos, self.speed, self.heading, self.accel, _ = step_fleet(
                self.pos, self.speed, self.heading, self.mparams, dt, self.rng.mobility,
                self.scenario.gen.canvas)
            self._dist = None
            for v, xy, sp, hd, ac in zip(self.sdvs, self.pos.tolist(), self.speed.tolist(),
                                         self.heading.tolist(), self.accel.tolist()):
                v.position = tuple(xy)
                v.velocity, v.heading, v.acceleration = sp, hd, ac
        dp = self.dparams
        if stepped and dp.drift_std > 0 and t > self._drift_upto:
            # sum the per-epoch increments since the last application so a
            # coarse step sees the same noise as the fine steps would have
            mult = self.trend[0] if t < self.trend[1] else 1.0
            noise = np.zeros_like(self.prefs)
            for k in range(self._drift_upto // dp.drift_every + 1, t // dp.drift_every + 1):
                noise += self.rng.keyed("demand", 0, k).normal(0.0, dp.drift_std, size=noise.shape)
            self._drift_upto = t
            np.clip(self.prefs + mult * noise, 0.0, 10.0, out=self.prefs)
        if stepped:
            self.hot.rebuild(t)
        if self.workload_paused:
            return
        for v in self.sdvs:
            if v.is_sleeping(t):
                continue
            self._issue(v)

    def _issue(self, v) -> None:
        t = self.clock.tick
        dp = self.dparams
        # one generator per (vehicle, request number): a request's draws do
        # not depend on what other vehicles did before it
        rng = self.rng.keyed("demand", 1, v.id, self._n_issued[v.id])
        self._n_issued[v.id] += 1
        sid = select_service(v, self.catalog, self.hot.current, dp, rng)
        spec = self.catalog[sid]
        self.hot.record(t, sid)
        v.accessed_history[sid] = t
        v.requests_since_sleep += 1
        req = TaskRequest(v.id, sid, spec.cpu_demand, spec.size_bytes, spec.timeout, t)
        hop = self.best_hop(v.id)
        ctx = self.context(v.id, hop)
        decision, ok = decide(self.offload_policy, ctx, req)
        deadline = t + int(math.floor(req.timeout / self.clock.dt + 1e-9)) + 1
        task = Task(self._next_task, req, decision, hop, deadline, policy_ok=ok,
                    target=decision.rsu_id, phase_start=t)
        self._next_task += 1
        task.analytic = self._analytic(ctx, req, decision)
        self.tasks[task.id] = task
        heapq.heappush(self._deadlines, (deadline, task.id))
        self.acc.on_issue()
        self.emit({"type": "issue", "tick": t, "task": task.id, "sdv": v.id, "service": sid,
                   "tier": decision.tier.value, "rsu": decision.rsu_id, "hop": hop,
                   "fallback": not ok})
        if hop is None:
            if decision.tier is Tier.LOCAL and sid in v.cache:
                self._after_control(task)
            else:
                self.fail_task(task, "range")
        else:
            self._set_phase(task, "control")
            self._new_conn(task, ConnKind.R2C, ("rsu", hop), ("cdc", 0), 0.0,
                           prop=rtt_backhaul(self.rsus[hop], self.cdc, self.chan),
                           on_done=[("control_done", task.id)])
        # go quiet
        if dp.sleep_after_requests is not None:
            trigger = v.requests_since_sleep >= dp.sleep_after_requests
        else:
            trigger = dp.sleep_trigger_prob >= 1 or rng.random() < dp.sleep_trigger_prob
        if trigger:
            v.sleeping_until = t + max(1, sleep_duration(v, dp, rng, self.clock.dt))
            v.requests_since_sleep = 0

    # ------------------------------------------------------------------
    # service tick
    # ------------------------------------------------------------------

    def service_tick(self) -> None:
        t = self.clock.tick
        dp = self.dparams
        if dp.service_drift_std > 0 and apply_stepping(self.clock):
            f = self.catalog.features
            scale = math.sqrt(self.clock.stepping)
            f += self.rng.services.normal(0.0, dp.service_drift_std * scale, size=f.shape)
            np.clip(f, 0.0, 10.0, out=f)
            self.catalog.refresh_norms()
        if dp.upload_rate > 0 and not self.workload_paused:
            new = upload_services(self.catalog, self.centers, self.scenario.gen, dp,
                                  self.rng.services, t)
            if new:
                self.emit({"type": "upload", "tick": t, "services": [s.id for s in new]})

    # ------------------------------------------------------------------
    # loop
    # ------------------------------------------------------------------

    def _timeouts(self) -> None:
        t = self.clock.tick
        while self._deadlines and self._deadlines[0][0] <= t:
            _, tid = heapq.heappop(self._deadlines)
            task = self.tasks.get(tid)
            if task is not None:
                self.fail_task(task, "timeout")

    def _anchor(self) -> None:
        clk = self.clock
        t = clk.tick
        rs = []
        for r in self.rsus:
            rs.append({"id": r.id, "busy": self.busy[r.id], "radio": self.radio_s[r.id],
                       "energy": self.energy[r.id], "tx_power": r.tx_power,
                       "used": r.cache.used_bytes, "capacity": r.cache.capacity_bytes,
                       "running": len(r.running_tasks), "queued": len(r.queue),
                       "alive": r.alive})
        in_flight = len(self.tasks)
        a = self.acc
        if a.issued != a.completed + a.failed + in_flight:
            raise AssertionError(f"task conservation broken at tick {t}")
        self.emit({"type": "anchor", "tick": t, "time": t * clk.dt, "rsus": rs,
                   "issued": a.issued, "completed": a.completed, "failed": a.failed,
                   "in_flight": in_flight})
        used_cap = [(r.cache.used_bytes, r.cache.capacity_bytes) for r in self.rsus]
        if self.scenario.metrics.window_ticks is None:
            frame = a.frame(t, clk.dt, self.busy, self.radio_s, self.energy, used_cap)
        else:
            from .metrics import frames_from_events
            frame = frames_from_events(self.events, self.scenario.metrics)[-1]
        self.frames.append(frame)

    def env_tick(self) -> None:
        """Advance the world by one tick."""
        clk = self.clock
        if clk.done:
            raise RuntimeError("clock already at the horizon")
        while (self._next_scripted < len(self.scripted)
               and self.scripted[self._next_scripted][1].tick <= clk.tick):
            self._apply_event(self.scripted[self._next_scripted][1], "script")
            self._next_scripted += 1
        self.rsu_tick()
        self.conn_tick()
        self.sdv_tick()
        self.service_tick()
        self._timeouts()
        clk.tick += 1
        if clk.tick % self.scenario.metrics.anchor_every == 0 or clk.tick == clk.horizon:
            self._anchor()

    def run(self) -> RunReport:
        t0 = time.perf_counter()
        self._anchor()
        while not self.clock.done:
            if not self._drain_control():
                break
            self.env_tick()
            self._publish()
        self.finished = True
        self._publish()
        echo = self.scenario.model_copy(update={"seed": self.seed})
        return RunReport(echo, scenario_hash(echo), self.seed,
                         tuple(self.frames), tuple(self.events), self.clock.tick,
                         time.perf_counter() - t0)


def run(scenario: Scenario, seed: int | None = None) -> RunReport:
    """Build the world for ``scenario`` and simulate it to the horizon."""
    return Simulation(scenario, seed).run()
