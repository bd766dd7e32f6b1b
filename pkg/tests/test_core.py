import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from herdrl.core import (Ablation, AgentKind, AgentState, JointObservation, RngStream, ScenarioConfig,
                         ScenarioTooDense, SPAWN_CLEARANCE, parse_counts, sample_circle_crossing, to_robot_frame,
                         wrap_angle)


def robot(px=0.0, py=-4.0, gx=0.0, gy=4.0, vx=0.0, vy=0.0, heading=math.pi / 2):
    return AgentState(px, py, vx, vy, 0.3, gx, gy, 1.0, heading, AgentKind.CENTER_ROBOT)


def peer(px, py, vx=0.0, vy=0.0, kind=AgentKind.HUMAN, r=0.3):
    return AgentState(px, py, vx, vy, r, -px, -py, 1.0, 0.0, kind)


def transform(states, angle, shift=(0.0, 0.0)):
    c, s = math.cos(angle), math.sin(angle)
    out = []
    for a in states:
        rot = lambda x, y: (c * x - s * y + shift[0], s * x + c * y + shift[1])
        px, py = rot(a.px, a.py)
        gx, gy = rot(a.gx, a.gy)
        vx, vy = c * a.vx - s * a.vy, s * a.vx + c * a.vy
        out.append(AgentState(px, py, vx, vy, a.radius, gx, gy, a.v_pref, a.heading + angle, a.kind))
    return out


class TestScenarioConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert (cfg.n_humans, cfg.n_other_robots) == (5, 2)
        assert (cfg.circle_radius, cfg.agent_radius, cfg.v_pref) == (4.0, 0.3, 1.0)
        assert (cfg.dt, cfg.time_limit, cfg.discomfort_dist) == (0.25, 25.0, 0.2)
        assert cfg.max_steps == 100

    def test_round_trip(self):
        cfg = ScenarioConfig(n_humans=3, ablation="HoR_nocate", seed=9)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown"):
            ScenarioConfig.from_dict({"n_humanz": 3})

    @pytest.mark.parametrize("bad", [{"dt": 0}, {"n_humans": -1}, {"time_limit": 0.1}, {"agent_radius": 0},
                                     {"discomfort_dist": -1}])
    def test_rejects_bad_values(self, bad):
        with pytest.raises(ValueError):
            ScenarioConfig(**bad)

    def test_ablation_flags(self):
        assert Ablation.HeR.heterogeneous and Ablation.HeR.uses_category
        assert not Ablation.HoR.heterogeneous and Ablation.HoR.uses_category
        assert Ablation.HeR_nocate.heterogeneous and not Ablation.HeR_nocate.uses_category
        assert not Ablation.HoR_nocate.heterogeneous and not Ablation.HoR_nocate.uses_category

    @pytest.mark.parametrize("tag,counts", [("5H2O", (5, 2)), ("5H", (5, 0)), ("0H3O", (0, 3)), ("7h2o", (7, 2))])
    def test_parse_counts(self, tag, counts):
        assert parse_counts(tag) == counts

    def test_parse_counts_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_counts("xyz")


class TestRngStream:
    def test_same_key_same_stream(self):
        assert RngStream(3, "train", 5).uniform(size=4).tolist() == RngStream(3, "train", 5).uniform(size=4).tolist()

    def test_namespaces_disjoint(self):
        a = RngStream(3, "train", 5).uniform(size=4)
        b = RngStream(3, "eval", 5).uniform(size=4)
        assert not np.array_equal(a, b)

    def test_free_labels_are_stable(self):
        assert RngStream(0, "test", "x").random() == RngStream(0, "test", "x").random()
        assert RngStream(0, "test", "x").random() != RngStream(0, "test", "y").random()


class TestSampling:
    def test_deterministic(self, scenario):
        a = sample_circle_crossing(scenario, RngStream(1, "train", 0))
        b = sample_circle_crossing(scenario, RngStream(1, "train", 0))
        assert a == b

    def test_counts_and_layout(self, scenario):
        states = sample_circle_crossing(scenario, RngStream(0, "train", 0))
        assert len(states) == 8
        kinds = [s.kind for s in states]
        assert kinds.count(AgentKind.CENTER_ROBOT) == 1
        assert kinds.count(AgentKind.HUMAN) == 5
        assert kinds.count(AgentKind.OTHER_ROBOT) == 2
        r = states[0]
        assert (r.px, r.py, r.gx, r.gy) == (0.0, -4.0, 0.0, 4.0)

    def test_clearance_over_1000_scenes(self, scenario):
        # Oracle: brute-force pairwise check of starts and goals.
        violations = 0
        for i in range(1000):
            states = sample_circle_crossing(scenario, RngStream(0, "test", "spawn", i))
            for a in range(len(states)):
                for b in range(a + 1, len(states)):
                    s, t = states[a], states[b]
                    need = s.radius + t.radius + SPAWN_CLEARANCE
                    violations += math.hypot(s.px - t.px, s.py - t.py) < need
                    violations += math.hypot(s.gx - t.gx, s.gy - t.gy) < need
        assert violations == 0

    def test_spawn_noise_bounds(self, scenario):
        for i in range(200):
            for s in sample_circle_crossing(scenario, RngStream(0, "test", "noise", i))[1:]:
                assert 3.5 - 1e-12 <= math.hypot(s.px, s.py) <= 4.5 + 1e-12

    def test_too_dense_raises(self):
        with pytest.raises(ScenarioTooDense):
            sample_circle_crossing(ScenarioConfig(n_humans=60, circle_radius=1.0), RngStream(0, "train", 0))


class TestRobotFrame:
    def test_goal_distance_and_da(self):
        obs = to_robot_frame([robot(), peer(0.0, 4.0)])
        assert obs.cr[0] == 8.0
        assert obs.humans[0, 5] == 8.0
        # Goal direction is +x in the robot frame.
        assert obs.humans[0, 0] == pytest.approx(8.0)
        assert obs.humans[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_category_bit(self):
        obs = to_robot_frame([robot(), peer(1.0, 0.0), peer(-1.0, 0.0, kind=AgentKind.OTHER_ROBOT)])
        assert obs.humans[0, 7] == 1.0
        assert obs.other_robots[0, 7] == 0.0

    def test_r_sum_exact(self, scenario):
        for i in range(20):
            states = sample_circle_crossing(scenario, RngStream(0, "test", "rsum", i))
            obs = to_robot_frame(states)
            r = states[0].radius
            for row in np.concatenate([obs.humans, obs.other_robots]):
                assert row[6] == row[4] + r

    def test_theta_zero_when_facing_goal(self):
        assert to_robot_frame([robot()]).cr[2] == pytest.approx(0.0, abs=1e-15)

    def test_robot_velocity_rotated(self):
        obs = to_robot_frame([robot(vx=0.0, vy=1.0)])
        assert obs.cr[4] == pytest.approx(1.0)
        assert obs.cr[5] == pytest.approx(0.0, abs=1e-15)

    def test_on_goal_falls_back_to_heading(self):
        obs = to_robot_frame([robot(px=0.0, py=4.0)])
        assert obs.cr[0] == 0.0 and obs.cr[2] == 0.0

    def test_requires_one_center_robot(self):
        with pytest.raises(ValueError):
            to_robot_frame([peer(1.0, 1.0)])

    @given(angle=st.floats(-math.pi, math.pi), dx=st.floats(-5, 5), dy=st.floats(-5, 5),
           seed=st.integers(0, 10_000))
    def test_rigid_motion_invariance(self, angle, dx, dy, seed):
        states = sample_circle_crossing(ScenarioConfig(), RngStream(seed, "test", "rot"))
        # Give everyone a velocity so the rotation is exercised on v too.
        states = [AgentState(s.px, s.py, 0.3 * math.cos(i), 0.3 * math.sin(i), s.radius, s.gx, s.gy, s.v_pref,
                             s.heading, s.kind) for i, s in enumerate(states)]
        a = to_robot_frame(states)
        b = to_robot_frame(transform(states, angle, (dx, dy)))
        assert a.allclose(b, atol=1e-9)

    def test_joint_observation_equality(self):
        obs = to_robot_frame([robot(), peer(1.0, 0.0)])
        same = JointObservation(obs.cr.copy(), obs.humans.copy(), obs.other_robots.copy())
        assert obs == same
        assert obs.counts == (1, 0)


@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert 0 <= w < 2 * math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
