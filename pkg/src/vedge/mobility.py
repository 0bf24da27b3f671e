"""Kinematic vehicle motion on a free plane.

Speed is pulled toward a target with Gaussian jitter; heading changes
arrive as a Poisson process.  Anything with the same inputs (positions,
speeds, headings) could replace it, e.g. a learned driving policy.
"""
from __future__ import annotations

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

__all__ = ["MobilityParams", "step", "step_fleet", "fold"]


class MobilityParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    target_speed: float = Field(40 / 3.6, ge=0)
    speed_noise_std: float = Field(0.5, ge=0)
    reversion: float = Field(0.5, ge=0)
    accel_max: float = Field(3.0, gt=0)
    turn_rate_max: float = Field(math.pi, ge=0)
    maneuver_freq: float = Field(2.0, ge=0)  # per minute
    boundary: Literal["reflect", "wrap"] = "reflect"
    initial_speed: float | None = Field(None, ge=0)


def fold(x: np.ndarray, size: float) -> tuple[np.ndarray, np.ndarray]:
    """Reflect coordinates back into [0, size].

    Returns the folded coordinates and a mask of entries that were mirrored
    an odd number of times (their heading component flips).
    """
    r = np.floor(x / size)
    xm = x - r * size
    odd = (r.astype(np.int64) % 2) != 0
    out = np.where(odd, size - xm, xm)
    return np.clip(out, 0.0, size), odd


def step_fleet(pos: np.ndarray, speed: np.ndarray, heading: np.ndarray,
               params: MobilityParams, dt: float, rng: np.random.Generator,
               canvas: tuple[float, float]):
    """Advance every vehicle by ``dt`` seconds.

    Inputs are arrays ordered by vehicle id; three draws per vehicle are made
    every call regardless of outcome so the stream stays aligned.  Returns
    ``(pos, speed, heading, accel, turned)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = len(speed)
    jitter = rng.standard_normal(n)
    u = rng.random(n)
    turn = rng.uniform(-1.0, 1.0, n)

    a = params.reversion * (params.target_speed - speed) + params.speed_noise_std * jitter
    a = np.clip(a, -params.accel_max, params.accel_max)
    new_speed = np.maximum(0.0, speed + a * dt)
    accel = (new_speed - speed) / dt

    rate = params.maneuver_freq / 60.0
    turned = u < -math.expm1(-rate * dt)
    heading = heading + np.where(turned, turn * params.turn_rate_max * dt, 0.0)

    x = pos[:, 0] + new_speed * dt * np.cos(heading)
    y = pos[:, 1] + new_speed * dt * np.sin(heading)
    X, Y = canvas
    if params.boundary == "wrap":
        x, y = np.mod(x, X), np.mod(y, Y)
    else:
        x, fx = fold(x, X)
        y, fy = fold(y, Y)
        heading = np.where(fx, math.pi - heading, heading)
        heading = np.where(fy, -heading, heading)
    heading = np.mod(heading, 2 * math.pi)
    return np.column_stack([x, y]), new_speed, heading, accel, turned


def step(v, params: MobilityParams, dt: float, rng: np.random.Generator,
         canvas: tuple[float, float]):
    """Single-vehicle update; writes position, velocity, acceleration, heading."""
    pos, sp, hd, ac, turned = step_fleet(
        np.array([v.position], dtype=float), np.array([v.velocity]), np.array([v.heading]),
        params, dt, rng, canvas)
    v.position = (float(pos[0, 0]), float(pos[0, 1]))
    v.velocity, v.heading, v.acceleration = float(sp[0]), float(hd[0]), float(ac[0])
    return bool(turned[0])
