"""Domain types, scenario configuration, seeded RNG streams and the
robot-centric observation transform."""

from __future__ import annotations

import enum
import json
import math
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

CENTER_FIELDS = ("d_g", "v_pref", "theta", "r", "v_x", "v_y")
NEIGHBOR_FIELDS = ("p_x", "p_y", "v_x", "v_y", "r_i", "d_a", "r_sum", "c")

# Minimum gap kept between spawned agents, on top of the radii.
SPAWN_CLEARANCE = 0.2
SPAWN_RADIAL_NOISE = 0.5
SPAWN_ANGULAR_NOISE = 0.5
MAX_SPAWN_ATTEMPTS = 1000


class AgentKind(enum.IntEnum):
    CENTER_ROBOT = 0
    HUMAN = 1
    OTHER_ROBOT = 2


class Ablation(str, enum.Enum):
    """Network variants: heterogeneous/homogeneous GNN, with/without category bit."""

    HeR = "HeR"
    HeR_nocate = "HeR_nocate"
    HoR = "HoR"
    HoR_nocate = "HoR_nocate"

    @property
    def heterogeneous(self) -> bool:
        return self in (Ablation.HeR, Ablation.HeR_nocate)

    @property
    def uses_category(self) -> bool:
        return self in (Ablation.HeR, Ablation.HoR)


class ScenarioTooDense(RuntimeError):
    """Raised when rejection sampling cannot place an agent."""


class RngStream:
    """Named, reproducible random stream.

    A stream is identified by a base seed and a key path, e.g.
    ``RngStream(7, "train", 12)`` for the 12th training episode. Different key
    paths never share state, so training and evaluation seeds are disjoint.
    """

    _NAMESPACES = {"train": 0, "eval": 1, "init": 2, "explore": 3, "replay": 4, "test": 5}

    def __init__(self, seed: int, *key):
        self.seed = int(seed)
        self.key = tuple(key)
        spawn_key = tuple(self._key_int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed & ((1 << 64) - 1), spawn_key=spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    @classmethod
    def _key_int(cls, k) -> int:
        if not isinstance(k, str):
            return int(k)
        if k in cls._NAMESPACES:
            return cls._NAMESPACES[k]
        # Other labels get a stable id above the 32-bit range used by indices.
        return (1 << 32) + zlib.crc32(k.encode("utf-8"))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


@dataclass(frozen=True)
class ScenarioConfig:
    n_humans: int = 5
    n_other_robots: int = 2
    circle_radius: float = 4.0
    agent_radius: float = 0.3
    v_pref: float = 1.0
    dt: float = 0.25
    time_limit: float = 25.0
    discomfort_dist: float = 0.2
    seed: int = 0
    ablation: Ablation = Ablation.HeR

    def __post_init__(self):
        object.__setattr__(self, "ablation", Ablation(self.ablation))
        if self.n_humans < 0 or self.n_other_robots < 0:
            raise ValueError("agent counts must be non-negative")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.time_limit <= self.dt:
            raise ValueError("time_limit must exceed dt")
        if self.discomfort_dist < 0:
            raise ValueError("discomfort_dist must be non-negative")
        if self.agent_radius <= 0 or self.v_pref <= 0 or self.circle_radius <= 0:
            raise ValueError("radius, v_pref and circle_radius must be positive")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.time_limit / self.dt - 1e-9))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["ablation"] = self.ablation.value
        return d

    def with_counts(self, n_humans: int, n_other_robots: int) -> "ScenarioConfig":
        return replace(self, n_humans=n_humans, n_other_robots=n_other_robots)


def parse_counts(tag: str) -> tuple[int, int]:
    """Parse a crowd tag such as ``5H2O`` or ``5H`` into (humans, other robots)."""
    tag = tag.strip().upper()
    h, _, rest = tag.partition("H")
    o = rest.rstrip("O") if rest else "0"
    try:
        return int(h), int(o or 0)
    except ValueError:
        raise ValueError(f"bad crowd tag {tag!r}") from None


@dataclass(frozen=True)
class AgentState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float
    gx: float
    gy: float
    v_pref: float
    heading: float
    kind: AgentKind = AgentKind.HUMAN

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.v_pref <= 0:
            raise ValueError("v_pref must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def goal(self) -> np.ndarray:
        return np.array([self.gx, self.gy])

    @property
    def goal_distance(self) -> float:
        return math.hypot(self.gx - self.px, self.gy - self.py)

    def to_dict(self) -> dict:
        return {
            "p": [self.px, self.py],
            "v": [self.vx, self.vy],
            "r": self.radius,
            "goal": [self.gx, self.gy],
            "v_pref": self.v_pref,
            "heading": self.heading,
            "kind": self.kind.name,
        }


@dataclass(frozen=True, eq=False)
class JointObservation:
    """Robot-centric observation.

    ``cr`` has the 6 columns of :data:`CENTER_FIELDS`; ``humans`` and
    ``other_robots`` are ``(k, 8)`` arrays with the columns of
    :data:`NEIGHBOR_FIELDS`.
    """

    cr: np.ndarray
    humans: np.ndarray = field(default_factory=lambda: np.zeros((0, 8)))
    other_robots: np.ndarray = field(default_factory=lambda: np.zeros((0, 8)))

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.humans), len(self.other_robots)

    def __eq__(self, other):
        if not isinstance(other, JointObservation):
            return NotImplemented
        return (
            np.array_equal(self.cr, other.cr)
            and np.array_equal(self.humans, other.humans)
            and np.array_equal(self.other_robots, other.other_robots)
        )

    def allclose(self, other: "JointObservation", atol=1e-9) -> bool:
        return (
            self.counts == other.counts
            and np.allclose(self.cr, other.cr, atol=atol, rtol=0)
            and np.allclose(self.humans, other.humans, atol=atol, rtol=0)
            and np.allclose(self.other_robots, other.other_robots, atol=atol, rtol=0)
        )


def wrap_angle(a):
    """Wrap to [0, 2*pi)."""
    w = np.mod(a, TWO_PI)
    # Tiny negative inputs round up to exactly 2*pi.
    return np.where(w >= TWO_PI, 0.0, w)


def _signed_angle(a):
    return np.arctan2(np.sin(a), np.cos(a))


def _spawn_peer(config: ScenarioConfig, rng: RngStream, kind: AgentKind) -> AgentState:
    R = config.circle_radius
    angle = rng.uniform(0.0, TWO_PI)
    start_r = R + rng.uniform(-SPAWN_RADIAL_NOISE, SPAWN_RADIAL_NOISE)
    goal_r = R + rng.uniform(-SPAWN_RADIAL_NOISE, SPAWN_RADIAL_NOISE)
    goal_angle = angle + math.pi + rng.uniform(-SPAWN_ANGULAR_NOISE, SPAWN_ANGULAR_NOISE)
    px, py = start_r * math.cos(angle), start_r * math.sin(angle)
    gx, gy = goal_r * math.cos(goal_angle), goal_r * math.sin(goal_angle)
    return AgentState(px, py, 0.0, 0.0, config.agent_radius, gx, gy, config.v_pref,
                      float(wrap_angle(math.atan2(gy - py, gx - px))), kind)


def _separated(a: AgentState, b: AgentState) -> bool:
    gap = a.radius + b.radius + SPAWN_CLEARANCE
    return (math.hypot(a.px - b.px, a.py - b.py) >= gap
            and math.hypot(a.gx - b.gx, a.gy - b.gy) >= gap)


def sample_circle_crossing(config: ScenarioConfig, rng: RngStream) -> list[AgentState]:
    """Sample a circle-crossing scene: [center robot, humans..., other robots...].

    The center robot always starts at (0, -R) heading for (0, R). Peers start
    on the perturbed circle and head roughly for the antipode. Starts and goals
    keep ``r_i + r_j + 0.2`` clearance.
    """
    R = config.circle_radius
    robot = AgentState(0.0, -R, 0.0, 0.0, config.agent_radius, 0.0, R, config.v_pref,
                       math.pi / 2, AgentKind.CENTER_ROBOT)
    agents = [robot]
    kinds = [AgentKind.HUMAN] * config.n_humans + [AgentKind.OTHER_ROBOT] * config.n_other_robots
    for kind in kinds:
        for _ in range(MAX_SPAWN_ATTEMPTS):
            cand = _spawn_peer(config, rng, kind)
            if all(_separated(cand, other) for other in agents):
                agents.append(cand)
                break
        else:
            raise ScenarioTooDense(
                f"could not place agent {len(agents)} after {MAX_SPAWN_ATTEMPTS} attempts"
            )
    return agents


def frame_angle(px, py, gx, gy, heading):
    """Angle of the robot-to-goal direction; falls back to heading when on the goal."""
    dx, dy = gx - px, gy - py
    degenerate = (dx == 0) & (dy == 0)
    return np.where(degenerate, heading, np.arctan2(dy, dx))


def observe_arrays(robot_p, robot_v, robot_heading, robot_goal, robot_radius, robot_vpref,
                   nb_p, nb_v, nb_r, nb_c):
    """Vectorized robot-centric transform.

    Robot quantities carry a leading batch axis ``B`` (``robot_p`` is (B, 2));
    neighbor arrays are (B, k, 2) / (B, k). Returns ``cr`` (B, 6) and
    ``nb`` (B, k, 8).
    """
    robot_p = np.asarray(robot_p, dtype=float)
    B = robot_p.shape[0]
    goal = np.broadcast_to(np.asarray(robot_goal, dtype=float), (B, 2))
    dg_vec = goal - robot_p
    alpha = frame_angle(robot_p[:, 0], robot_p[:, 1], goal[:, 0], goal[:, 1], robot_heading)
    c, s = np.cos(alpha), np.sin(alpha)

    cr = np.empty((B, 6))
    cr[:, 0] = np.hypot(dg_vec[:, 0], dg_vec[:, 1])
    cr[:, 1] = robot_vpref
    cr[:, 2] = _signed_angle(robot_heading - alpha)
    cr[:, 3] = robot_radius
    cr[:, 4] = c * robot_v[:, 0] + s * robot_v[:, 1]
    cr[:, 5] = -s * robot_v[:, 0] + c * robot_v[:, 1]

    k = nb_p.shape[1]
    nb = np.empty((B, k, 8))
    if k:
        rel = nb_p - robot_p[:, None, :]
        cb, sb = c[:, None], s[:, None]
        nb[:, :, 0] = cb * rel[..., 0] + sb * rel[..., 1]
        nb[:, :, 1] = -sb * rel[..., 0] + cb * rel[..., 1]
        nb[:, :, 2] = cb * nb_v[..., 0] + sb * nb_v[..., 1]
        nb[:, :, 3] = -sb * nb_v[..., 0] + cb * nb_v[..., 1]
        nb[:, :, 4] = nb_r
        nb[:, :, 5] = np.hypot(rel[..., 0], rel[..., 1])
        nb[:, :, 6] = nb_r + robot_radius
        nb[:, :, 7] = nb_c
    return cr, nb


def split_agents(states) -> tuple[AgentState, list[AgentState], list[AgentState]]:
    robots = [s for s in states if s.kind == AgentKind.CENTER_ROBOT]
    if len(robots) != 1:
        raise ValueError(f"expected exactly one center robot, found {len(robots)}")
    humans = [s for s in states if s.kind == AgentKind.HUMAN]
    others = [s for s in states if s.kind == AgentKind.OTHER_ROBOT]
    return robots[0], humans, others


def neighbor_arrays(neighbors):
    """Stack neighbor states into (k, 2) position/velocity and (k,) radius/category arrays."""
    k = len(neighbors)
    p = np.array([(a.px, a.py) for a in neighbors], dtype=float).reshape(k, 2)
    v = np.array([(a.vx, a.vy) for a in neighbors], dtype=float).reshape(k, 2)
    r = np.array([a.radius for a in neighbors], dtype=float)
    c = np.array([1.0 if a.kind == AgentKind.HUMAN else 0.0 for a in neighbors])
    return p, v, r, c


def to_robot_frame(states) -> JointObservation:
    """Express every agent in the center robot's goal-aligned frame."""
    robot, humans, others = split_agents(states)
    p, v, r, c = neighbor_arrays(humans + others)
    cr, nb = observe_arrays(
        np.array([[robot.px, robot.py]]), np.array([[robot.vx, robot.vy]]),
        np.array([robot.heading]), (robot.gx, robot.gy), robot.radius, robot.v_pref,
        p[None], v[None], r[None], c[None],
    )
    n = len(humans)
    return JointObservation(cr[0], nb[0, :n].copy(), nb[0, n:].copy())
