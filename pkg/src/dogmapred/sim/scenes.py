"""Procedural scene families on a fixed two-lane street.

The street runs north-south through a 19.2 m square (128 cells of 0.15 m)
with the ego parked on the west sidewalk.  Northbound traffic uses the east
lane; a marked crosswalk sits at a fixed latitude so that whether a car stops
there depends only on whether a pedestrian is crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..grid import GridSpec
from .scenario import Actor, Rect, Scenario, Waypoint

NORTH = math.pi / 2
SOUTH = -math.pi / 2
EAST = 0.0
WEST = math.pi
FAMILIES = ("straight", "stop", "cross")

VEHICLE = (4.0, 1.8)
PEDESTRIAN = (0.5, 0.5)


@dataclass(frozen=True)
class StreetLayout:
    extent: float = 19.2
    road_west: float = 10.5
    road_east: float = 15.5
    west_walk: float = 9.75
    east_walk: float = 16.5
    crosswalk_y: float = 12.0
    south_entry: float = -3.0
    north_exit: float = 23.0

    @property
    def nb_lane(self) -> float:
        return 0.75 * self.road_east + 0.25 * self.road_west

    @property
    def sb_lane(self) -> float:
        return 0.25 * self.road_east + 0.75 * self.road_west

    @property
    def ego(self) -> tuple[float, float]:
        """Center of cell (64, 64), so the ego offset is zero."""
        c = 64.5 * 0.15
        return c, c

    def grid(self) -> GridSpec:
        return GridSpec(128, 128)

    def static_map(self) -> tuple:
        return (
            Rect(4.25, 5.0, 7.5, 9.0),
            Rect(4.25, 16.5, 7.5, 5.0),
            Rect(18.35, 9.6, 1.7, 19.2),
        )


STREET = StreetLayout()


class _Path:
    """Builds a waypoint list along one axis-aligned lane."""

    def __init__(self, x, y, heading, speed, t, tag="straight"):
        self.wps = [Waypoint(x, y, heading, speed, t, tag)]

    @property
    def last(self) -> Waypoint:
        return self.wps[-1]

    def _to(self, dist, speed, dt, tag):
        w = self.last
        x = w.x + dist * math.cos(w.heading)
        y = w.y + dist * math.sin(w.heading)
        self.wps.append(Waypoint(round(x, 9), round(y, 9), w.heading, speed, w.t + dt, tag))
        return self

    def cruise(self, dist, tag="straight"):
        return self._to(dist, self.last.speed, dist / self.last.speed, tag)

    def change_speed(self, dist, speed, tag="straight"):
        return self._to(dist, speed, 2.0 * dist / (self.last.speed + speed), tag)

    def hold(self, dt, tag="stop"):
        return self._to(0.0, 0.0, dt, tag)

    def turn(self, heading, tag="turn"):
        w = self.last
        self.wps[-1] = Waypoint(w.x, w.y, w.heading, w.speed, w.t, tag)
        self.wps.append(Waypoint(w.x, w.y, heading, w.speed, w.t + 1e-3, tag))
        return self


def _vehicle(aid, path):
    return Actor(aid, "vehicle", *VEHICLE, tuple(path.wps))


def _pedestrian(aid, path):
    return Actor(aid, "pedestrian", *PEDESTRIAN, tuple(path.wps))


def _through_car(aid, lane_x, northbound, speed, t_enter, layout=STREET):
    if northbound:
        p = _Path(lane_x, layout.south_entry, NORTH, speed, t_enter)
    else:
        p = _Path(lane_x, layout.north_exit, SOUTH, speed, t_enter)
    return _vehicle(aid, p.cruise(layout.north_exit - layout.south_entry))


def _walker(aid, rng, t_enter, layout=STREET):
    x = layout.west_walk if rng.random() < 0.5 else layout.east_walk
    speed = rng.uniform(1.0, 1.4)
    if rng.random() < 0.5:
        p = _Path(x, -1.0, NORTH, speed, t_enter)
    else:
        p = _Path(x, layout.extent + 1.0, SOUTH, speed, t_enter)
    return _pedestrian(aid, p.cruise(layout.extent + 2.0))


def straight_scene(seed: int, duration: float = 12.0, layout: StreetLayout = STREET) -> Scenario:
    """Cars pass in both lanes at constant speed; pedestrians walk the sidewalks."""
    rng = np.random.default_rng([seed, 1])
    actors = [_through_car("nb0", layout.nb_lane, True, rng.uniform(1.5, 2.5), rng.uniform(0.0, 3.0))]
    if rng.random() < 0.6:
        actors.append(_through_car("sb0", layout.sb_lane, False, rng.uniform(1.5, 2.5), rng.uniform(0.0, 5.0)))
    for k in range(rng.integers(0, 3)):
        actors.append(_walker(f"ped{k}", rng, rng.uniform(0.0, 4.0)))
    return Scenario(actors, layout.static_map(), (Waypoint(*layout.ego, 0.0, 0.0, 0.0),), duration, seed)


def stopping_car(aid, stop_y, speed, brake_dist, t_enter, hold, layout=STREET):
    """Northbound car that cruises, brakes to a halt with its center at ``stop_y`` and waits."""
    p = _Path(layout.nb_lane, layout.south_entry, NORTH, speed, t_enter)
    p.cruise(stop_y - brake_dist - layout.south_entry)
    p.change_speed(brake_dist, 0.0, "stop")
    p.hold(hold)
    return p


def stop_scene(seed: int, duration: float = 12.0, layout: StreetLayout = STREET,
               blocker_y: float | None = None, speed: float | None = None,
               brake_dist: float | None = None, gap: float | None = None,
               t_enter: float | None = None) -> Scenario:
    """A parked car blocks the northbound lane; the approaching car stops behind it."""
    rng = np.random.default_rng([seed, 2])
    blocker_y = rng.uniform(11.0, 16.0) if blocker_y is None else blocker_y
    speed = rng.uniform(1.5, 2.5) if speed is None else speed
    brake_dist = rng.uniform(2.0, 4.5) if brake_dist is None else brake_dist
    gap = rng.uniform(0.6, 1.5) if gap is None else gap
    t_enter = rng.uniform(0.0, 2.0) if t_enter is None else t_enter
    stop_y = blocker_y - VEHICLE[0] - gap
    p = stopping_car("nb0", stop_y, speed, brake_dist, t_enter, duration + 1.0, layout)
    actors = [_vehicle("nb0", p)]
    if rng.random() < 0.5:
        actors.append(_through_car("sb0", layout.sb_lane, False, rng.uniform(1.5, 2.5), rng.uniform(0.0, 5.0)))
    static = layout.static_map() + (Rect(layout.nb_lane, blocker_y, VEHICLE[1], VEHICLE[0]),)
    return Scenario(actors, static, (Waypoint(*layout.ego, 0.0, 0.0, 0.0),), duration, seed)


def crossing_pedestrian(aid, t_start, speed, layout=STREET, approach: float = 2.0):
    """Walks down the east sidewalk to the crosswalk, then crosses westward."""
    y = layout.crosswalk_y
    p = _Path(layout.east_walk, y + approach, SOUTH, speed, t_start)
    p.cruise(approach).turn(WEST, "cross")
    p.cruise(layout.east_walk - layout.west_walk, "cross")
    return p


def crossing_times(p: _Path, x_enter: float, x_leave: float) -> tuple[float, float]:
    """When a westbound crossing path reaches ``x_enter`` and ``x_leave``."""
    w = p.wps
    k = next(i for i, a in enumerate(w) if a.heading == WEST)
    a = w[k]
    return a.t + (a.x - x_enter) / a.speed, a.t + (a.x - x_leave) / a.speed


def yielding_car(aid, ped: _Path, speed, brake_dist, lag, layout=STREET):
    """Northbound car that halts before the crosswalk and waits for the pedestrian to clear its lane."""
    stop_y = layout.crosswalk_y - PEDESTRIAN[1] - 0.6 - 0.5 * VEHICLE[0]
    t_in, t_out = crossing_times(ped, layout.road_east + 0.3, layout.nb_lane - VEHICLE[1] / 2 - 0.5)
    t_arrive = t_in + lag
    travel = (stop_y - brake_dist - layout.south_entry) / speed + 2.0 * brake_dist / speed
    p = stopping_car(aid, stop_y, speed, brake_dist, t_arrive - travel, max(t_out - t_arrive, 0.3), layout)
    p.wps[-1] = Waypoint(p.last.x, p.last.y, p.last.heading, 0.0, p.last.t, "wait-then-cross")
    accel = 0.5 * speed * 2.0
    p.change_speed(accel, speed, "wait-then-cross")
    p.cruise(layout.north_exit - p.last.y)
    return p


def cross_scene(seed: int, duration: float = 12.0, layout: StreetLayout = STREET) -> Scenario:
    """A pedestrian crosses at the crosswalk; the northbound car yields."""
    rng = np.random.default_rng([seed, 3])
    ped = crossing_pedestrian("ped0", rng.uniform(0.0, 4.0), rng.uniform(1.0, 1.4), layout)
    car = yielding_car("nb0", ped, rng.uniform(1.5, 2.5), rng.uniform(2.0, 4.5), rng.uniform(-1.0, 1.5), layout)
    actors = [_pedestrian("ped0", ped), _vehicle("nb0", car)]
    if rng.random() < 0.5:
        actors.append(_walker("ped1", rng, rng.uniform(0.0, 4.0)))
    return Scenario(actors, layout.static_map(), (Waypoint(*layout.ego, 0.0, 0.0, 0.0),), duration, seed)


def make_scene(family: str, seed: int, duration: float = 12.0) -> Scenario:
    builders = {"straight": straight_scene, "stop": stop_scene, "cross": cross_scene}
    if family not in builders:
        raise ValueError(f"unknown scene family {family!r}; choose from {FAMILIES}")
    return builders[family](seed, duration)


# ---------------------------------------------------------------------------
# fixed probe scenes


def probe_stop_scene(duration: float = 8.0) -> Scenario:
    """Blocker south edge at y = 12 m; the car is mid-approach around t = 3 s."""
    return stop_scene(0, duration, blocker_y=14.0, speed=2.5, brake_dist=2.5, gap=0.8, t_enter=0.0)


PROBE_STOP_BLOCKER_LINE = 12.0


def probe_crossing_scenes(duration: float = 10.0):
    """``(base, source)``: a car heading for the crosswalk with nobody crossing,
    and a scene whose crossing pedestrian can be cut out and pasted into it."""
    layout = STREET
    car = _through_car("nb0", layout.nb_lane, True, 2.0, 0.0, layout)
    base = Scenario([car], layout.static_map(), (Waypoint(*layout.ego, 0.0, 0.0, 0.0),), duration, 11)
    ped = crossing_pedestrian("ped0", 0.0, 1.2, layout)
    source = Scenario([_pedestrian("ped0", ped)], layout.static_map(),
                      (Waypoint(*layout.ego, 0.0, 0.0, 0.0),), duration, 12)
    return base, source


# ---------------------------------------------------------------------------
# large mixed scene for the class-imbalance statistic


def downtown_scene(seed: int = 7, duration: float = 8.0, size_cells: int = 256, extent: float = 60.0):
    """Six city blocks, two avenues and one cross street, seen from a slowly driving ego.

    The ``size_cells`` grid follows the ego through the ``extent`` metre city.
    Returns ``(scenario, grid)``.
    """
    rng = np.random.default_rng([seed, 4])
    ext = extent
    roads_x = (ext * 0.3, ext * 0.7)
    roads_y = (ext * 0.5,)
    static = []
    edges_x = [0.0, *roads_x, ext]
    edges_y = [0.0, *roads_y, ext]
    half_road = 4.0
    for x0, x1 in zip(edges_x, edges_x[1:]):
        for y0, y1 in zip(edges_y, edges_y[1:]):
            bx0 = x0 + (half_road if x0 > 0 else 0.0)
            bx1 = x1 - (half_road if x1 < ext else 0.0)
            by0 = y0 + (half_road if y0 > 0 else 0.0)
            by1 = y1 - (half_road if y1 < ext else 0.0)
            static.append(Rect((bx0 + bx1) / 2, (by0 + by1) / 2, bx1 - bx0 - 1.0, by1 - by0 - 1.0))
    actors = []
    for k, rx in enumerate(roads_x):
        north = k % 2 == 0
        x = rx + (1.5 if north else -1.5)
        p = _Path(x, 0.5 if north else ext - 0.5, NORTH if north else SOUTH, rng.uniform(1.5, 2.5),
                  rng.uniform(0.0, 1.0))
        actors.append(_vehicle(f"car{k}", p.cruise(ext - 1.0)))
    for k in range(6):
        rx = roads_x[k % 2] + (-half_road + 0.75 if k < 3 else half_road - 0.75)
        y = rng.uniform(2.0, ext - 2.0)
        p = _Path(rx, y, NORTH if rng.random() < 0.5 else SOUTH, rng.uniform(1.0, 1.4), 0.0)
        remaining = (ext - 1.0 - y) if p.last.heading == NORTH else (y - 1.0)
        actors.append(_pedestrian(f"ped{k}", p.cruise(max(remaining, 0.5))))
    ego_x = roads_x[0] - 1.5
    ego = _Path(ego_x, ext * 0.4, NORTH, 1.0, 0.0).cruise(duration * 1.0)
    scenario = Scenario(actors, tuple(static), tuple(ego.wps), duration, seed, (0.0, 0.0, ext, ext))
    return scenario, GridSpec(size_cells, size_cells)
