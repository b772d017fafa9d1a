"""Scenario machinery: node placement (fixed counts or PPP), indoor
random-waypoint mobility, and two-state Markov link blockage.

All randomness flows through numpy Generators handed in by the caller, so a
scenario is reproducible from a single seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import GeometryConfig, NodesConfig, RunConfig


# --------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # uniform in a disc: r = R*sqrt(u) keeps the density flat
        r = self.radius * np.sqrt(rng.uniform(size=n))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        return pts + np.asarray(self.center)

    def contains(self, p: np.ndarray) -> np.ndarray:
        d = np.asarray(p)[..., :2] - np.asarray(self.center)
        return np.linalg.norm(d, axis=-1) <= self.radius + 1e-12

    @property
    def area(self) -> float:
        return np.pi * self.radius ** 2


@dataclass(frozen=True)
class Rect:
    origin: tuple[float, float]
    size: tuple[float, float]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.uniform(size=(n, 2))
        return np.asarray(self.origin) + u * np.asarray(self.size)

    def contains(self, p: np.ndarray) -> np.ndarray:
        q = np.asarray(p)[..., :2] - np.asarray(self.origin)
        s = np.asarray(self.size)
        return np.all((q >= -1e-12) & (q <= s + 1e-12), axis=-1)

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    inner: float
    outer: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # flat density: interpolate in r^2 between the two radii
        r = np.sqrt(rng.uniform(self.inner ** 2, self.outer ** 2, size=n))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        return pts + np.asarray(self.center)

    def contains(self, p: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(np.asarray(p)[..., :2] - np.asarray(self.center),
                           axis=-1)
        return (d >= self.inner - 1e-12) & (d <= self.outer + 1e-12)

    @property
    def area(self) -> float:
        return np.pi * (self.outer ** 2 - self.inner ** 2)


def sample_ppp(density: float, region: Disc | Rect,
               rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson point process on a region: Poisson count with
    mean density*area, points uniform given the count."""
    if density < 0:
        raise ValueError("density must be non-negative")
    n = int(rng.poisson(density * region.area))
    if n == 0:
        return np.empty((0, 2))
    return region.sample(rng, n)


# --------------------------------------------------------------------------
# nodes

@dataclass
class NodeSet:
    """3D positions of every terminal.  Users are ordered outdoor first,
    then indoor; `indoor_mask` marks the indoor block."""
    bs: np.ndarray
    users: np.ndarray            # (K, 3)
    indoor_mask: np.ndarray      # (K,) bool
    eves: np.ndarray             # (E, 3)
    eve_active: np.ndarray       # (E,) bool
    uav: np.ndarray              # (3,)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_eves(self) -> int:
        return len(self.eves)


def _with_height(xy: np.ndarray, h: float) -> np.ndarray:
    return np.column_stack([xy, np.full(len(xy), h)])


# TR 38.901 UMi drops assume a minimum BS-UT 2D distance of 10 m; the
# inter-user floor keeps drawn terminals spatially resolvable so zero
# forcing never has to invert a rank-deficient Gram
MIN_BS_DIST = 10.0
MIN_USER_SEP = 3.0


def _drop_users(region, n: int, rng: np.random.Generator, bs_xy: np.ndarray,
                placed: list[np.ndarray]) -> np.ndarray:
    pts = []
    for _ in range(n):
        for _ in range(200):     # rejection cap; region >> exclusion discs
            p = region.sample(rng, 1)[0]
            if np.linalg.norm(p - bs_xy) < MIN_BS_DIST:
                continue
            if any(np.linalg.norm(p - q) < MIN_USER_SEP for q in placed):
                continue
            break
        placed.append(p)
        pts.append(p)
    return np.asarray(pts).reshape(n, 2)


def build_nodes(geom: GeometryConfig, nodes            : NodesConfig,
                rng: np.random.Generator) -> NodeSet:
    outdoor = Disc(geom.outdoor_center, geom.outdoor_radius)
    indoor = Rect(geom.building_min, geom.building_size)
    guard = Annulus(geom.bs_pos[:2], *geom.eve_ring)
    bs_xy = np.asarray(geom.bs_pos[:2], float)

    if nodes.ppp_mode:
        out_xy = sample_ppp(nodes.user_density, outdoor, rng)
        in_xy = sample_ppp(nodes.user_density, indoor, rng)
        eve_xy = sample_ppp(nodes.eve_density, guard, rng)
        # guarantee a non-degenerate scenario
        if len(out_xy) + len(in_xy) == 0:
            in_xy = indoor.sample(rng, 1)
        n_active = int(rng.integers(0, len(eve_xy) + 1)) if len(eve_xy) else 0
        active = np.zeros(len(eve_xy), bool)
        active[:n_active] = True
    else:
        placed: list[np.ndarray] = []
        out_xy = _drop_users(outdoor, nodes.n_users_outdoor, rng, bs_xy,
                             placed)
        in_xy = _drop_users(indoor, nodes.n_users_indoor, rng, bs_xy, placed)
        eve_xy = guard.sample(rng, nodes.n_eves)
        active = np.zeros(nodes.n_eves, bool)
        active[nodes.n_eves_idle:] = True

    users = np.vstack([_with_height(out_xy, geom.user_height),
                       _with_height(in_xy, geom.user_height)])
    indoor_mask = np.zeros(len(users), bool)
    indoor_mask[len(out_xy):] = True

    uav0 = np.array([
        0.5 * (geom.uav_region[0] + geom.uav_region[1]),
        0.5 * (geom.uav_region[2] + geom.uav_region[3]),
        geom.uav_height,
    ])
    return NodeSet(
        bs=np.asarray(geom.bs_pos, float),
        users=users,
        indoor_mask=indoor_mask,
        eves=_with_height(eve_xy, geom.eve_height),
        eve_active=active,
        uav=uav0,
    )


# --------------------------------------------------------------------------
# mobility: random waypoint for indoor users

SPEED_RANGE = (0.5, 1.0)   # m/s


@dataclass
class MobilityState:
    positions: np.ndarray    # (K, 2), indoor users only
    waypoints: np.ndarray    # (K, 2)
    speeds: np.ndarray       # (K,)
    region: Rect

    def copy(self) -> "MobilityState":
        return MobilityState(self.positions.copy(), self.waypoints.copy(),
                             self.speeds.copy(), self.region)


def init_mobility(positions_xy: np.ndarray, region: Rect,
                  rng: np.random.Generator) -> MobilityState:
    n = len(positions_xy)
    wp = region.sample(rng, n) if n else np.empty((0, 2))
    sp = rng.uniform(*SPEED_RANGE, size=n)
    return MobilityState(positions_xy.astype(float).copy(), wp, sp, region)


def step_mobility(state: MobilityState, dt: float,
                  rng: np.random.Generator) -> MobilityState:
    """Advance every walker by speed*dt toward its waypoint; on arrival draw
    a fresh waypoint and a fresh speed uniform in SPEED_RANGE."""
    out = state.copy()
    for i in range(len(out.positions)):
        budget = out.speeds[i] * dt
        while budget > 0:
            delta = out.waypoints[i] - out.positions[i]
            dist = float(np.linalg.norm(delta))
            if dist <= budget:
                out.positions[i] = out.waypoints[i]
                budget -= dist
                out.waypoints[i] = out.region.sample(rng, 1)[0]
                out.speeds[i] = rng.uniform(*SPEED_RANGE)
                if dist == 0.0 and budget > 0:
                    # degenerate: waypoint equals position; avoid spinning
                    break
            else:
                out.positions[i] = out.positions[i] + delta * (budget / dist)
                budget = 0.0
    return out


# --------------------------------------------------------------------------
# blockage: independent two-state Markov chain per link

@dataclass
class BlockageChain:
    p_block: float    # P(clear -> blocked) per step
    p_clear: float    # P(blocked -> clear) per step
    depth_db: float

    @classmethod
    def from_durations(cls, mean_blocked_s: float, mean_clear_s: float,
                       dt_s: float, depth_db: float) -> "BlockageChain":
        # geometric holding times: mean duration = dt / p(exit)
        return cls(p_block=min(1.0, dt_s / mean_clear_s),
                   p_clear=min(1.0, dt_s / mean_blocked_s),
                   depth_db=depth_db)

    @property
    def stationary_blocked(self) -> float:
        return self.p_block / (self.p_block + self.p_clear)


def step_blockage(states: np.ndarray, chain: BlockageChain,
                  rng: np.random.Generator) -> np.ndarray:
    """One Markov step for a boolean state vector (True = blocked)."""
    u = rng.uniform(size=states.shape)
    flip_to_clear = states & (u < chain.p_clear)
    flip_to_block = ~states & (u < chain.p_block)
    return (states | flip_to_block) & ~flip_to_clear


def sample_stationary_blockage(n: int, chain: BlockageChain,
                               rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(size=n) < chain.stationary_blocked


# --------------------------------------------------------------------------
# scenario container

@dataclass
class Scenario:
    nodes: NodeSet
    geom: GeometryConfig
    mobility: MobilityState
    blockage_chain: BlockageChain
    indoor_region: Rect = field(init=False)

    def __post_init__(self) -> None:
        self.indoor_region = Rect(self.geom.building_min, self.geom.building_size)

    def with_uav(self, uav_pos: np.ndarray) -> "Scenario":
        nodes = replace(self.nodes, uav=np.asarray(uav_pos, float))
        return Scenario(nodes, self.geom, self.mobility, self.blockage_chain)


def build_scenario(cfg: RunConfig, rng: np.random.Generator) -> Scenario:
    nodes = build_nodes(cfg.geometry, cfg.nodes, rng)
    indoor_region = Rect(cfg.geometry.building_min, cfg.geometry.building_size)
    mob = init_mobility(nodes.users[nodes.indoor_mask][:, :2], indoor_region, rng)
    chain = BlockageChain.from_durations(
        cfg.channel.blockage_mean_blocked_s,
        cfg.channel.blockage_mean_clear_s,
        cfg.channel.blockage_dt_s,
        cfg.channel.blockage_depth_db,
    )
    return Scenario(nodes, cfg.geometry, mob, chain)
