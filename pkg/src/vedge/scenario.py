"""Scenario files: one TOML document with a table per parameter group.

Layout::

    name = "desk"
    seed = 1

    [gen]        # world generation
    [channel]    # radio and backhaul
    [demand]     # request behaviour
    [mobility]
    [cache]
    [offload]
    [cdc]
    [clock]
    [metrics]

    [[events]]   # scripted commands, fired at the start of their tick
    tick = 500
    command = "kill_rsu"
    rsu = 2

Unknown keys anywhere are rejected.  ``None`` values are omitted on dump
since TOML has no null.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .cache import CACHE_POLICIES, CacheParams
from .channel import ChannelParams
from .demand import DemandParams
from .metrics import MetricsParams
from .mobility import MobilityParams
from .offload import OFFLOAD_POLICIES
from .synthgen import GenConfig

__all__ = [
    "ClockParams",
    "OffloadParams",
    "CdcParams",
    "ScriptedEvent",
    "Scenario",
    "ScenarioError",
    "cross_problems",
    "validate_and_load",
    "loads_scenario",
    "dumps_scenario",
    "scenario_hash",
    "desk_scenario",
    "DESK_CACHE_SIZES",
    "full_scenario",
    "PRESETS",
]


class ScenarioError(ValueError):
    """Scenario failed validation; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


class ClockParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(0.1, gt=0)
    horizon: int = Field(2000, ge=0)
    stepping: int = Field(1, ge=1)


class OffloadParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    policy: str = "nearest-feasible-least-loaded"


class CdcParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    compute: float = Field(10e12, gt=0)
    distance: float = Field(300e3, ge=0)  # metres below the canvas origin


Command = Literal["inject_services", "trend_burst", "pause", "resume", "kill_rsu", "revive_rsu"]


class ScriptedEvent(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tick: int = Field(ge=0)
    command: Command
    count: int | None = Field(None, ge=1)
    cluster: int | None = Field(None, ge=0)
    multiplier: float | None = Field(None, ge=0)
    duration: int | None = Field(None, ge=1)
    rsu: int | None = Field(None, ge=0)

    @model_validator(mode="after")
    def _args(self):
        need = {"inject_services": ("count",), "trend_burst": ("multiplier", "duration"),
                "kill_rsu": ("rsu",), "revive_rsu": ("rsu",)}.get(self.command, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.command} needs {', '.join(missing)}")
        return self

    def to_record(self) -> dict:
        return self.model_dump(exclude_none=True)


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "scenario"
    seed: int = Field(0, ge=0)
    gen: GenConfig = GenConfig()
    channel: ChannelParams = ChannelParams()
    demand: DemandParams = DemandParams()
    mobility: MobilityParams = MobilityParams()
    cache: CacheParams = CacheParams()
    offload: OffloadParams = OffloadParams()
    cdc: CdcParams = CdcParams()
    clock: ClockParams = ClockParams()
    metrics: MetricsParams = MetricsParams()
    events: list[ScriptedEvent] = Field(default_factory=list)

    @model_validator(mode="after")
    def _cross(self):
        problems = cross_problems(self.model_dump())
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def with_updates(self, **sections) -> "Scenario":
        """Copy with some sections partially overridden, re-validated.

        ``sc.with_updates(cache={"policy": "lfu"}, seed=3)``
        """
        data = self.to_dict()
        for k, v in sections.items():
            if isinstance(v, dict):
                data.setdefault(k, {}).update(v)
            else:
                data[k] = v
        return Scenario.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)


def cross_problems(data: dict) -> list[str]:
    """Checks spanning sections; works on raw (possibly invalid) data."""
    def get(section, key, default):
        v = data.get(section) or {}
        v = v.get(key, default) if isinstance(v, dict) else default
        return v if v is not None else default

    horizon = get("clock", "horizon", ClockParams().horizon)
    n_rsu = get("gen", "rsu_count", GenConfig().rsu_count)
    n_clu = get("gen", "cluster_count", GenConfig().cluster_count)
    problems = []
    for i, ev in enumerate(data.get("events") or []):
        if not isinstance(ev, dict):
            continue
        t, r, c = ev.get("tick"), ev.get("rsu"), ev.get("cluster")
        if isinstance(t, int) and isinstance(horizon, int) and t > horizon:
            problems.append(f"events[{i}].tick: {t} is past the horizon {horizon}")
        if isinstance(r, int) and isinstance(n_rsu, int) and r >= n_rsu:
            problems.append(f"events[{i}].rsu: no RSU with id {r}")
        if isinstance(c, int) and isinstance(n_clu, int) and c >= n_clu:
            problems.append(f"events[{i}].cluster: no cluster {c}")
    for key in ("policy", "sdv_policy"):
        name = get("cache", key, "lru")
        if isinstance(name, str) and name.lower() not in CACHE_POLICIES:
            problems.append(f"cache.{key}: unknown policy {name!r}")
    name = get("offload", "policy", OffloadParams().policy)
    if isinstance(name, str) and name not in OFFLOAD_POLICIES:
        problems.append(f"offload.policy: unknown policy {name!r}")
    w, a = get("metrics", "window_ticks", None), get("metrics", "anchor_every", 100)
    if isinstance(w, int) and isinstance(a, int) and a > 0 and w % a:
        problems.append("metrics.window_ticks: must be a multiple of anchor_every")
    return problems


def _problems(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        # cross-field validators report several issues at once
        parts = msg.split("; ") if not loc else [msg]
        out.extend(f"{loc}: {p}" if loc else p for p in parts)
    return out


def loads_scenario(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"parse error: {exc}"]) from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        problems = _problems(exc)
        problems += [p for p in cross_problems(data) if p not in problems]
        raise ScenarioError(problems) from None


def validate_and_load(path) -> Scenario:
    """Read and validate a scenario file, collecting every violation."""
    p = Path(path)
    if not p.is_file():
        raise ScenarioError([f"{p}: no such file"])
    return loads_scenario(p.read_text())


def dumps_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(sc.to_dict())


def scenario_hash(sc: Scenario) -> str:
    blob = json.dumps(sc.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def full_scenario() -> Scenario:
    """Full-size setup (1000 vehicles, 20 RSUs, 10**6 services)."""
    return Scenario(name="full", seed=0)


def desk_scenario() -> Scenario:
    """Small setup that runs in seconds: 100 vehicles, 5 RSUs, 10**4
    services, 2000 ticks.

    Byte quantities are scaled by 1/100 against the full-size table (images
    10 kB - 10 MB, RSU cache 80 MB standing in for 8 GB) so the radios are
    not saturated with only five RSUs.  Charm ranks are drawn uniformly so
    charm spans its whole range and popular services stand out.
    """
    return Scenario(
        name="desk",
        seed=0,
        gen=GenConfig(canvas=(4000.0, 4000.0), sdv_count=100, rsu_count=5,
                      service_count=10_000, size_range=(1e4, 1e7), cpu_range=(1e8, 1e11),
                      charm_alpha=0.0, coverage_range=(1000.0, 2000.0),
                      sdv_cache_sizes=[4e7, 8e7, 16e7]),
        demand=DemandParams(sleep_k=1.0),
        cache=CacheParams(policy="lru", rsu_capacity=8e7),
        offload=OffloadParams(policy="nearest-rsu"),
        clock=ClockParams(horizon=2000),
    )


# cache sizes standing in for 4 / 8 / 16 GB in the desk scenario
DESK_CACHE_SIZES = (4e7, 8e7, 16e7)


PRESETS = {"desk": desk_scenario, "full": full_scenario}
