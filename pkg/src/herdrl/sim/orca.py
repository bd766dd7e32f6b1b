"""Optimal reciprocal collision avoidance for the scripted peers.

Follows the reference RVO2 agent update: one half-plane per neighbor, an
incremental 2D linear program toward the preferred velocity, and the 3D
relaxation that returns the least-violating velocity when the half-planes
have no common point. Scalar math is done on Python floats; with fewer than
a dozen neighbors that is faster than numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..core import AgentState

RVO_EPSILON = 1e-5


@dataclass(frozen=True)
class OrcaParams:
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0
    time_horizon_obst: float = 5.0
    max_speed: float | None = None  # None -> the agent's v_pref
    # Extra radius used only inside the velocity constraints.
    safety_space: float = 0.05

    def __post_init__(self):
        for name in ("neighbor_dist", "time_horizon", "time_horizon_obst"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_speed is not None and self.max_speed <= 0:
            raise ValueError("max_speed must be positive")
        if self.safety_space < 0:
            raise ValueError("safety_space must be non-negative")


class _Line:
    __slots__ = ("px", "py", "dx", "dy")

    def __init__(self, px, py, dx, dy):
        self.px, self.py, self.dx, self.dy = px, py, dx, dy


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def preferred_velocity(agent: AgentState, dt: float, max_speed: float | None = None) -> tuple[float, float]:
    """Unit vector to the goal scaled by ``min(v_pref, d_g / dt)``."""
    dx, dy = agent.gx - agent.px, agent.gy - agent.py
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    speed = min(agent.v_pref if max_speed is None else max_speed, dist / dt)
    return dx / dist * speed, dy / dist * speed


def _lp1(lines, no, radius, ox, oy, direction_opt):
    line = lines[no]
    dot = line.px * line.dx + line.py * line.dy
    disc = dot * dot + radius * radius - (line.px * line.px + line.py * line.py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for i in range(no):
        other = lines[i]
        denom = _det(line.dx, line.dy, other.dx, other.dy)
        numer = _det(other.dx, other.dy, line.px - other.px, line.py - other.py)
        if abs(denom) <= RVO_EPSILON:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if ox * line.dx + oy * line.dy > 0.0 else t_left
    else:
        t = line.dx * (ox - line.px) + line.dy * (oy - line.py)
        t = min(max(t, t_left), t_right)
    return line.px + t * line.dx, line.py + t * line.dy


def _lp2(lines, radius, ox, oy, direction_opt):
    if direction_opt:
        rx, ry = ox * radius, oy * radius
    elif ox * ox + oy * oy > radius * radius:
        n = math.hypot(ox, oy)
        rx, ry = ox / n * radius, oy / n * radius
    else:
        rx, ry = ox, oy
    for i, line in enumerate(lines):
        if _det(line.dx, line.dy, line.px - rx, line.py - ry) > 0.0:
            res = _lp1(lines, i, radius, ox, oy, direction_opt)
            if res is None:
                return i, (rx, ry)
            rx, ry = res
    return len(lines), (rx, ry)


def _lp3(lines, begin, radius, result):
    rx, ry = result
    distance = 0.0
    for i in range(begin, len(lines)):
        li = lines[i]
        if _det(li.dx, li.dy, li.px - rx, li.py - ry) <= distance:
            continue
        projected = []
        for j in range(i):
            lj = lines[j]
            denom = _det(li.dx, li.dy, lj.dx, lj.dy)
            if abs(denom) <= RVO_EPSILON:
                if li.dx * lj.dx + li.dy * lj.dy > 0.0:
                    continue
                px, py = 0.5 * (li.px + lj.px), 0.5 * (li.py + lj.py)
            else:
                t = _det(lj.dx, lj.dy, li.px - lj.px, li.py - lj.py) / denom
                px, py = li.px + t * li.dx, li.py + t * li.dy
            ddx, ddy = lj.dx - li.dx, lj.dy - li.dy
            n = math.hypot(ddx, ddy)
            projected.append(_Line(px, py, ddx / n, ddy / n))
        fail, candidate = _lp2(projected, radius, -li.dy, li.dx, True)
        if fail >= len(projected):
            rx, ry = candidate
        # On numerical failure the previous result is kept, as in RVO2.
        distance = _det(li.dx, li.dy, li.px - rx, li.py - ry)
    return rx, ry


def orca_lines(agent: AgentState, neighbors, params: OrcaParams, dt: float) -> list[_Line]:
    inv_th = 1.0 / params.time_horizon
    lines = []
    nd_sq = params.neighbor_dist ** 2
    for other in neighbors:
        rpx, rpy = other.px - agent.px, other.py - agent.py
        dist_sq = rpx * rpx + rpy * rpy
        if dist_sq > nd_sq:
            continue
        rvx, rvy = agent.vx - other.vx, agent.vy - other.vy
        comb = agent.radius + other.radius + 2.0 * params.safety_space
        comb_sq = comb * comb
        if dist_sq > comb_sq:
            wx, wy = rvx - inv_th * rpx, rvy - inv_th * rpy
            w_sq = wx * wx + wy * wy
            dot1 = wx * rpx + wy * rpy
            if dot1 < 0.0 and dot1 * dot1 > comb_sq * w_sq:
                # Project on the cut-off circle.
                wl = math.sqrt(w_sq)
                ux, uy = wx / wl, wy / wl
                dx, dy = uy, -ux
                k = comb * inv_th - wl
                u = (k * ux, k * uy)
            else:
                # Project on the nearer leg of the cone.
                leg = math.sqrt(dist_sq - comb_sq)
                if _det(rpx, rpy, wx, wy) > 0.0:
                    dx = (rpx * leg - rpy * comb) / dist_sq
                    dy = (rpx * comb + rpy * leg) / dist_sq
                else:
                    dx = -(rpx * leg + rpy * comb) / dist_sq
                    dy = -(-rpx * comb + rpy * leg) / dist_sq
                dot2 = rvx * dx + rvy * dy
                u = (dot2 * dx - rvx, dot2 * dy - rvy)
        else:
            # Already overlapping: resolve within one time step.
            inv_dt = 1.0 / dt
            wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
            wl = math.hypot(wx, wy)
            if wl == 0.0:
                # Coincident centers with equal velocity; pick a fixed escape axis.
                wx, wy, wl = 1.0, 0.0, 1.0
            ux, uy = wx / wl, wy / wl
            dx, dy = uy, -ux
            k = comb * inv_dt - wl
            u = (k * ux, k * uy)
        lines.append(_Line(agent.vx + 0.5 * u[0], agent.vy + 0.5 * u[1], dx, dy))
    return lines


def orca_velocity(agent: AgentState, visible_neighbors, params: OrcaParams | None = None,
                  dt: float = 0.25) -> tuple[float, float]:
    """Collision-avoiding velocity closest to the agent's preferred velocity."""
    params = params or OrcaParams()
    max_speed = agent.v_pref if params.max_speed is None else params.max_speed
    ox, oy = preferred_velocity(agent, dt, max_speed)
    lines = orca_lines(agent, visible_neighbors, params, dt)
    fail, result = _lp2(lines, max_speed, ox, oy, False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return result
