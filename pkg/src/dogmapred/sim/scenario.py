"""Scenario description: actors with timed waypoints, static geometry, ego path.

Scenario files are INI-style text::

    [scenario]
    duration = 8.0
    seed = 7
    bounds = -20 -20 40 40            # xmin ymin xmax ymax, metres
    ego = 9.675 9.675 0 0 0           # waypoints "x y heading speed t", ';'-separated

    [actor car1]
    kind = vehicle                    # vehicle | pedestrian
    size = 4.0 1.8                    # length width, metres
    waypoints = 13.5 -3 1.5708 2.0 0 straight; 13.5 25 1.5708 2.0 14 straight

    [static wall]
    shape = rect                      # rect: center x y, size l w, heading
    center = 18.5 9.6
    size = 2.0 19.2
    heading = 0

    [static kerb]
    shape = segment                   # segment: points x0 y0 x1 y1, thickness
    points = 0 0 10 0
    thickness = 0.3
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

MANEUVERS = ("straight", "turn", "stop", "cross", "wait-then-cross")
KINDS = ("vehicle", "pedestrian")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    heading: float
    speed: float
    t: float
    tag: str = "straight"

    def __post_init__(self):
        if self.tag not in MANEUVERS:
            raise ScenarioError(f"unknown maneuver tag {self.tag!r}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading, self.speed, self.t)):
            raise ScenarioError("waypoint values must be finite")
        if self.speed < 0:
            raise ScenarioError("waypoint speed must be non-negative")


def _check_times(waypoints):
    if not waypoints:
        raise ScenarioError("trajectory needs at least one waypoint")
    times = [w.t for w in waypoints]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScenarioError("waypoint times must be strictly increasing")


class Trajectory:
    """Piecewise motion between waypoints.

    Within a segment the along-track distance follows constant acceleration
    between the two waypoint speeds, rescaled so both endpoints are hit
    exactly.  Segments whose speeds are both zero are traversed linearly.
    """

    def __init__(self, waypoints: Iterable[Waypoint]):
        self.waypoints = tuple(waypoints)
        _check_times(self.waypoints)

    @property
    def start(self) -> float:
        return self.waypoints[0].t

    @property
    def end(self) -> float:
        return self.waypoints[-1].t

    def active(self, t: float) -> bool:
        return self.start <= t <= self.end

    def state(self, t: float):
        """Return ``(x, y, heading, vx, vy)`` at time ``t`` (clamped to the trajectory)."""
        wps = self.waypoints
        if t <= wps[0].t or len(wps) == 1:
            w = wps[0]
            return w.x, w.y, w.heading, 0.0, 0.0
        if t >= wps[-1].t:
            w = wps[-1]
            return w.x, w.y, w.heading, 0.0, 0.0
        k = int(np.searchsorted([w.t for w in wps], t, side="right")) - 1
        a, b = wps[k], wps[k + 1]
        dt = b.t - a.t
        tau = t - a.t
        dx, dy = b.x - a.x, b.y - a.y
        if dx == 0 and dy == 0:
            frac, rate = 0.0, 0.0
        elif a.speed + b.speed > 0:
            acc = (b.speed - a.speed) / dt
            nominal = 0.5 * (a.speed + b.speed) * dt
            frac = (a.speed * tau + 0.5 * acc * tau * tau) / nominal
            rate = (a.speed + acc * tau) / nominal
        else:
            frac, rate = tau / dt, 1.0 / dt
        dh = (b.heading - a.heading + math.pi) % (2 * math.pi) - math.pi
        heading = a.heading + dh * (tau / dt)
        return a.x + dx * frac, a.y + dy * frac, heading, dx * rate, dy * rate


@dataclass(frozen=True)
class Actor:
    id: str
    kind: str
    length: float
    width: float
    waypoints: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown actor kind {self.kind!r}")
        if not (self.length > 0 and self.width > 0):
            raise ScenarioError(f"actor {self.id}: footprint must be positive")
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        _check_times(self.waypoints)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.waypoints)


@dataclass(frozen=True)
class Rect:
    cx: float
    cy: float
    length: float
    width: float
    heading: float = 0.0


@dataclass(frozen=True)
class Segment:
    x0: float
    y0: float
    x1: float
    y1: float
    thickness: float = 0.3


@dataclass(frozen=True)
class Scenario:
    actors: tuple = ()
    static_map: tuple = ()
    ego_trajectory: tuple = (Waypoint(0.0, 0.0, 0.0, 0.0, 0.0),)
    duration: float = 10.0
    seed: int = 0
    bounds: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "actors", tuple(self.actors))
        object.__setattr__(self, "static_map", tuple(self.static_map))
        object.__setattr__(self, "ego_trajectory", tuple(self.ego_trajectory))
        if not self.duration > 0 or not math.isfinite(self.duration):
            raise ScenarioError("duration must be positive")
        _check_times(self.ego_trajectory)
        for s in self.static_map:
            vals = list(vars(s).values())
            if not all(math.isfinite(v) for v in vals):
                raise ScenarioError("static geometry must be finite")
        ids = [a.id for a in self.actors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("actor ids must be unique")

    def ego_position(self, t: float) -> tuple[float, float]:
        x, y, *_ = Trajectory(self.ego_trajectory).state(t)
        return x, y


# ---------------------------------------------------------------------------
# text format


def _floats(text: str, n: int, what: str) -> list[float]:
    parts = text.split()
    if len(parts) != n:
        raise ScenarioError(f"{what}: expected {n} numbers, got {text!r}")
    return [float(p) for p in parts]


def _parse_waypoints(text: str, what: str) -> list[Waypoint]:
    out = []
    for item in text.split(";"):
        parts = item.split()
        if not parts:
            continue
        if len(parts) not in (5, 6):
            raise ScenarioError(f"{what}: waypoint needs 'x y heading speed t [tag]', got {item!r}")
        nums = [float(p) for p in parts[:5]]
        out.append(Waypoint(*nums, *(parts[5:] or [])))
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_waypoints(wps) -> str:
    return "; ".join(" ".join([_fmt(w.x), _fmt(w.y), _fmt(w.heading), _fmt(w.speed), _fmt(w.t), w.tag]) for w in wps)


def parse_scenario(text: str) -> Scenario:
    # ';' separates waypoints, so only '#' starts inline comments
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    if "scenario" not in cp:
        raise ScenarioError("missing [scenario] section")
    sc = cp["scenario"]
    actors, statics = [], []
    for name in cp.sections():
        sec = cp[name]
        if name.startswith("actor "):
            aid = name[6:].strip()
            length, width = _floats(sec["size"], 2, f"{name}.size")
            actors.append(Actor(aid, sec.get("kind", "vehicle"), length, width,
                                _parse_waypoints(sec["waypoints"], name)))
        elif name.startswith("static "):
            shape = sec.get("shape", "rect")
            if shape == "rect":
                cx, cy = _floats(sec["center"], 2, f"{name}.center")
                ln, wd = _floats(sec["size"], 2, f"{name}.size")
                statics.append(Rect(cx, cy, ln, wd, float(sec.get("heading", "0"))))
            elif shape == "segment":
                statics.append(Segment(*_floats(sec["points"], 4, f"{name}.points"),
                                       float(sec.get("thickness", "0.3"))))
            else:
                raise ScenarioError(f"{name}: unknown shape {shape!r}")
        elif name != "scenario":
            raise ScenarioError(f"unknown section [{name}]")
    bounds = tuple(_floats(sc["bounds"], 4, "bounds")) if "bounds" in sc else None
    ego = _parse_waypoints(sc["ego"], "ego") if "ego" in sc else [Waypoint(0, 0, 0, 0, 0)]
    return Scenario(actors, statics, ego, float(sc["duration"]), int(sc.get("seed", "0")), bounds)


def dump_scenario(s: Scenario) -> str:
    lines = ["[scenario]", f"duration = {_fmt(s.duration)}", f"seed = {s.seed}"]
    if s.bounds is not None:
        lines.append("bounds = " + " ".join(_fmt(b) for b in s.bounds))
    lines += [f"ego = {_fmt_waypoints(s.ego_trajectory)}", ""]
    for a in s.actors:
        lines += [f"[actor {a.id}]", f"kind = {a.kind}", f"size = {_fmt(a.length)} {_fmt(a.width)}",
                  f"waypoints = {_fmt_waypoints(a.waypoints)}", ""]
    for i, g in enumerate(s.static_map):
        if isinstance(g, Rect):
            lines += [f"[static s{i}]", "shape = rect", f"center = {_fmt(g.cx)} {_fmt(g.cy)}",
                      f"size = {_fmt(g.length)} {_fmt(g.width)}", f"heading = {_fmt(g.heading)}", ""]
        else:
            lines += [f"[static s{i}]", "shape = segment",
                      f"points = {_fmt(g.x0)} {_fmt(g.y0)} {_fmt(g.x1)} {_fmt(g.y1)}",
                      f"thickness = {_fmt(g.thickness)}", ""]
    return "\n".join(lines)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_scenario(s))
