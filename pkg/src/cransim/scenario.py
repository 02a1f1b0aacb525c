"""Simulation world: RRHs, users, scatterers, shadow objects and their geometry.

All lengths are in meters, times in seconds and angles in degrees. Scenario
values are immutable; operations such as :func:`advance` return new values.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from cransim.errors import ConfigError

# Independent RNG streams per world component, so that changing e.g. the
# scatterer density leaves user placement and shadow footprints untouched.
_STREAM_USERS = 0
_STREAM_SCATTERERS = 1
_STREAM_SHADOWS = 2


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite Vec3 component: {self}")

    @classmethod
    def of(cls, values) -> "Vec3":
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2)


@dataclass(frozen=True)
class Rrh:
    id: int
    position: Vec3
    boresight_azimuth: float
    num_antennas: int


@dataclass(frozen=True)
class User:
    id: int
    position: Vec3
    velocity: Vec3
    num_antennas: int
    serving_rrh: int

    @property
    def heading(self) -> float:
        """Direction of travel in degrees; 0 for a user at rest."""
        if self.velocity.x == 0.0 and self.velocity.y == 0.0:
            return 0.0
        return math.degrees(math.atan2(self.velocity.y, self.velocity.x))


@dataclass(frozen=True, eq=False)
class ScattererField:
    density: float
    area_bounds: tuple[float, float, float, float]
    points: np.ndarray  # (n, 3)
    gains: np.ndarray  # (n,)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        return (
            isinstance(other, ScattererField)
            and self.density == other.density
            and self.area_bounds == other.area_bounds
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.gains, other.gains)
        )


@dataclass(frozen=True)
class ShadowObject:
    """A wall-like obstacle: a 2-D footprint segment extruded to ``height``."""

    start: tuple[float, float]
    end: tuple[float, float]
    height: float

    def __post_init__(self):
        if self.height < 0:
            raise ValueError("shadow object height must be >= 0")


@dataclass(frozen=True)
class LinkGeometry:
    distance_m: float
    azimuth_aod_deg: float
    azimuth_aoa_deg: float
    los_blocked_by: tuple[ShadowObject, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    area_width: float = 100.0
    area_height: float = 100.0
    rrh_grid: tuple[int, int] = (2, 2)
    rrh_height: float = 10.0
    rrh_antennas: int = 8
    user_height: float = 1.5
    user_antennas: int = 2
    user_speed: float = 30.0
    tti: float = 1e-3
    scatterer_density: float = 0.01
    reflection_gain: tuple[float, float] = (0.001, 0.01)
    scatterer_height: tuple[float, float] = (0.0, 5.0)
    num_shadows: int = 4
    shadow_length: float = 10.0
    shadow_height: float = 1.5
    candidate_positions: int = 1000
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        positive = {
            "area_width": self.area_width,
            "area_height": self.area_height,
            "rrh_height": self.rrh_height,
            "user_height": self.user_height,
            "tti": self.tti,
            "shadow_length": self.shadow_length,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"must be > 0, got {value}", key)
        counts = {
            "rrh_antennas": self.rrh_antennas,
            "user_antennas": self.user_antennas,
            "candidate_positions": self.candidate_positions,
            "rrh_grid": min(self.rrh_grid),
        }
        for key, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"must be an integer >= 1, got {value}", key)
        if len(self.rrh_grid) != 2:
            raise ConfigError("expected two grid dimensions", "rrh_grid")
        if self.user_speed < 0:
            raise ConfigError("must be >= 0", "user_speed")
        if not 0 <= self.scatterer_density <= 1:
            raise ConfigError("must be in [0, 1] scatterers per m^2", "scatterer_density")
        lo, hi = self.reflection_gain
        if not 0 < lo <= hi <= 1:
            raise ConfigError("need 0 < low <= high <= 1", "reflection_gain")
        lo, hi = self.scatterer_height
        if not 0 <= lo <= hi:
            raise ConfigError("need 0 <= low <= high", "scatterer_height")
        if self.num_shadows < 0:
            raise ConfigError("must be >= 0", "num_shadows")
        if self.shadow_height < 0:
            raise ConfigError("must be >= 0", "shadow_height")
        return self


@dataclass(frozen=True)
class Scenario:
    rrhs: tuple[Rrh, ...]
    users: tuple[User, ...]
    scatterers: ScattererField
    shadows: tuple[ShadowObject, ...]
    tti: float
    rng_seed: int
    area_bounds: tuple[float, float, float, float]
    # Per-RRH service cell (xmin, ymin, xmax, ymax) from which user
    # candidate positions are drawn.
    cells: tuple[tuple[float, float, float, float], ...] = field(default=())

    def rrh(self, rrh_id: int) -> Rrh:
        for r in self.rrhs:
            if r.id == rrh_id:
                return r
        raise KeyError(f"unknown RRH id {rrh_id}")

    def user(self, user_id: int) -> User:
        for u in self.users:
            if u.id == user_id:
                return u
        raise KeyError(f"unknown user id {user_id}")


def wrap_deg(angle):
    """Wrap angles to (-180, 180]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    wrapped = np.where(wrapped == -180.0, 180.0, wrapped)
    return wrapped if np.ndim(wrapped) else float(wrapped)


def bearing_deg(src, dst):
    """Azimuth of ``dst`` as seen from ``src`` (x axis = 0 deg, counter-clockwise)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    d = dst[..., :2] - src[..., :2]
    return np.degrees(np.arctan2(d[..., 1], d[..., 0]))


def _grid_shape(n: int) -> tuple[int, int]:
    """Factor pair (nx, ny) of n closest to square, nx >= ny."""
    ny = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return n // ny, ny


def _rrh_layout(cfg: ScenarioConfig):
    nx, ny = cfg.rrh_grid
    xs = np.linspace(0.0, cfg.area_width, nx) if nx > 1 else np.array([cfg.area_width / 2])
    ys = np.linspace(0.0, cfg.area_height, ny) if ny > 1 else np.array([cfg.area_height / 2])
    dx = cfg.area_width / (nx - 1) if nx > 1 else cfg.area_width
    dy = cfg.area_height / (ny - 1) if ny > 1 else cfg.area_height
    center = (cfg.area_width / 2, cfg.area_height / 2)
    rrhs, cells = [], []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            boresight = float(bearing_deg((x, y), center)) if (x, y) != center else 0.0
            rrhs.append(Rrh(len(rrhs), Vec3(float(x), float(y), cfg.rrh_height), boresight, cfg.rrh_antennas))
            cells.append((
                max(0.0, x - dx / 2), max(0.0, y - dy / 2),
                min(cfg.area_width, x + dx / 2), min(cfg.area_height, y + dy / 2),
            ))
    return rrhs, cells


def cell_grid(cell, n: int, z: float) -> np.ndarray:
    """Cell-centred uniform grid of ``n`` points over a rectangle, shape (n, 3)."""
    x0, y0, x1, y1 = cell
    nx, ny = _grid_shape(n)
    if (x1 - x0) < (y1 - y0):
        nx, ny = ny, nx
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(n, z)])


def candidate_positions(scenario: Scenario, user_id: int, n: int = 1000) -> np.ndarray:
    """The candidate position set of a user: a grid over its serving RRH's cell."""
    user = scenario.user(user_id)
    return cell_grid(scenario.cells[user.serving_rrh], n, user.position.z)


def build_scatterers(density, bounds, gain_range, height_range, rng) -> ScattererField:
    """Uniform point process: every 1 m^2 holds a scatterer with probability ``density``."""
    x0, y0, x1, y1 = bounds
    area = (x1 - x0) * (y1 - y0)
    count = int(rng.binomial(int(math.ceil(area)), density)) if density > 0 else 0
    xy = rng.uniform((x0, y0), (x1, y1), size=(count, 2))
    z = rng.uniform(*height_range, size=count)
    gains = rng.uniform(*gain_range, size=count)
    return ScattererField(density, tuple(bounds), np.column_stack([xy, z]).reshape(count, 3), gains)


def build_scenario(config: ScenarioConfig) -> Scenario:
    cfg = config.validate()
    bounds = (0.0, 0.0, float(cfg.area_width), float(cfg.area_height))
    rrhs, cells = _rrh_layout(cfg)

    rng = rng_stream(cfg.seed, _STREAM_USERS)
    users = []
    for rrh, cell in zip(rrhs, cells):
        grid = cell_grid(cell, cfg.candidate_positions, cfg.user_height)
        pos = grid[rng.integers(len(grid))]
        heading = rng.uniform(0.0, 2 * math.pi)
        vel = Vec3(cfg.user_speed * math.cos(heading), cfg.user_speed * math.sin(heading), 0.0)
        serving = _nearest_rrh(rrhs, pos)
        users.append(User(rrh.id, Vec3.of(pos), vel, cfg.user_antennas, serving))

    scatterers = build_scatterers(
        cfg.scatterer_density, bounds, cfg.reflection_gain, cfg.scatterer_height,
        rng_stream(cfg.seed, _STREAM_SCATTERERS),
    )

    rng = rng_stream(cfg.seed, _STREAM_SHADOWS)
    shadows = []
    for _ in range(cfg.num_shadows):
        cx, cy = rng.uniform((0.0, 0.0), (cfg.area_width, cfg.area_height))
        theta = rng.uniform(0.0, math.pi)
        hx, hy = 0.5 * cfg.shadow_length * math.cos(theta), 0.5 * cfg.shadow_length * math.sin(theta)
        shadows.append(ShadowObject((cx - hx, cy - hy), (cx + hx, cy + hy), cfg.shadow_height))

    return Scenario(
        rrhs=tuple(rrhs),
        users=tuple(users),
        scatterers=scatterers,
        shadows=tuple(shadows),
        tti=cfg.tti,
        rng_seed=cfg.seed,
        area_bounds=bounds,
        cells=tuple(cells),
    )


def _nearest_rrh(rrhs, pos) -> int:
    d = [math.hypot(r.position.x - pos[0], r.position.y - pos[1]) for r in rrhs]
    return rrhs[int(np.argmin(d))].id


def with_user_positions(scenario: Scenario, positions) -> Scenario:
    """Copy of ``scenario`` with users moved to ``positions`` (one row per user, in order)."""
    users = tuple(
        dataclasses.replace(u, position=Vec3.of(p)) for u, p in zip(scenario.users, positions, strict=True)
    )
    return dataclasses.replace(scenario, users=users)


def _reflect(p, v, t, lo, hi):
    if v == 0.0 or hi <= lo:
        return p, v
    span = hi - lo
    s = p - lo + v * t
    bounces = math.floor(s / span)
    u = s % (2 * span)
    pos = lo + (u if u <= span else 2 * span - u)
    return pos, (v if bounces % 2 == 0 else -v)


def advance(scenario: Scenario, num_ttis: int) -> Scenario:
    """Move every user ``num_ttis`` TTIs along its velocity, reflecting at the area bounds."""
    if num_ttis < 0:
        raise ValueError("num_ttis must be >= 0")
    if num_ttis == 0:
        return scenario
    t = scenario.tti * num_ttis
    x0, y0, x1, y1 = scenario.area_bounds
    users = []
    for u in scenario.users:
        x, vx = _reflect(u.position.x, u.velocity.x, t, x0, x1)
        y, vy = _reflect(u.position.y, u.velocity.y, t, y0, y1)
        users.append(dataclasses.replace(
            u, position=Vec3(x, y, u.position.z), velocity=Vec3(vx, vy, u.velocity.z)
        ))
    return dataclasses.replace(scenario, users=tuple(users))


def _segment_crossing(p, q, a, b):
    """Parameter t in [0, 1] along p->q where it crosses segment a-b, or None."""
    r = (q[0] - p[0], q[1] - p[1])
    s = (b[0] - a[0], b[1] - a[1])
    denom = r[0] * s[1] - r[1] * s[0]
    if denom == 0.0:
        return None  # parallel or collinear: treated as grazing, not blocking
    w = (a[0] - p[0], a[1] - p[1])
    t = (w[0] * s[1] - w[1] * s[0]) / denom
    u = (w[0] * r[1] - w[1] * r[0]) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return t
    return None


def blocking_objects(tx: Vec3, rx: Vec3, shadows) -> tuple[ShadowObject, ...]:
    """Shadow objects whose footprint the tx-rx ray crosses at or below their height."""
    blocked = []
    for obj in shadows:
        t = _segment_crossing((tx.x, tx.y), (rx.x, rx.y), obj.start, obj.end)
        if t is None:
            continue
        ray_height = tx.z + t * (rx.z - tx.z)
        if ray_height <= obj.height:
            blocked.append(obj)
    return tuple(blocked)


def geometry(scenario: Scenario, rrh: int, user: int) -> LinkGeometry:
    r = scenario.rrh(rrh)
    u = scenario.user(user)
    tx, rx = r.position.as_array(), u.position.as_array()
    distance = float(np.linalg.norm(rx - tx))
    aod = wrap_deg(bearing_deg(tx, rx) - r.boresight_azimuth)
    aoa = wrap_deg(bearing_deg(rx, tx) - u.heading)
    return LinkGeometry(distance, aod, aoa, blocking_objects(r.position, u.position, scenario.shadows))
