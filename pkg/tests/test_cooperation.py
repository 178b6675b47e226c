import math

import numpy as np
import pytest

from lanecoop.core import ControlBounds, SafetyParams, SpeedBounds, VehicleState
from lanecoop.cooperation import (
    FastLaneVehicle,
    build_cooperative_set,
    build_cooperative_set_minmax,
    disruption_metric,
    pair_terminal_qp,
    select_optimal_pair,
    solve_all_pairs,
    CooperativeSet,
)


def veh(vid, x, v, phi=0.6):
    return FastLaneVehicle(vid=vid, state=VehicleState(x, v), phi=phi)


class TestBuildSet:
    def test_projection_past_front_window_excluded(self):
        # projected 80 + 25*4 = 180 > 164 + 10
        s = build_cooperative_set([veh(1, 80, 25)], xU_tf=164.0, xC_tf=100.0,
                                  t0=0.0, tf=4.0, L_f=10.0, L_r=30.0)
        assert len(s) == 0

    def test_projection_above_rear_bound_included(self):
        # projected 50 + 25*4 = 150 >= 120 - 30 = 90
        s = build_cooperative_set([veh(2, 50, 25)], xU_tf=164.0, xC_tf=120.0,
                                  t0=0.0, tf=4.0, L_f=10.0, L_r=30.0)
        assert [m.vid for m in s.members] == [2]

    def test_empty_lane(self):
        s = build_cooperative_set([], 164.0, 120.0, 0.0, 4.0, 10.0, 30.0)
        assert len(s) == 0

    def test_front_to_rear_order_preserved(self):
        lane = [veh(1, 140, 25), veh(2, 100, 26), veh(3, 60, 24)]
        s = build_cooperative_set(lane, xU_tf=260.0, xC_tf=140.0,
                                  t0=0.0, tf=4.0, L_f=20.0, L_r=60.0)
        assert [m.vid for m in s.members] == [1, 2, 3]
        xs = [m.state.x for m in s.members]
        assert xs == sorted(xs, reverse=True)


class TestBuildSetMinMax:
    def test_constant_speed_member_always_included(self, bounds):
        speeds = SpeedBounds(14, 33)
        lane = [veh(1, 100, 25)]
        base = build_cooperative_set(lane, 260.0, 140.0, 0.0, 4.0, 20.0, 60.0)
        union = build_cooperative_set_minmax(lane, 260.0, 140.0, 0.0, 4.0,
                                             20.0, 60.0, bounds, speeds)
        assert set(m.vid for m in base.members) <= set(m.vid for m in union.members)

    def test_included_via_brake_projection_only(self, bounds):
        # constant-speed projection exceeds the front bound, but the
        # full-brake extreme lands inside the window
        speeds = SpeedBounds(14, 33)
        v = veh(7, 100, 30)
        proj = 100 + 30 * 4.0
        xU_tf, L_f = 180.0, 10.0
        assert proj > xU_tf + L_f
        base = build_cooperative_set([v], xU_tf, 120.0, 0.0, 4.0, L_f, 40.0)
        union = build_cooperative_set_minmax([v], xU_tf, 120.0, 0.0, 4.0,
                                             L_f, 40.0, bounds, speeds)
        assert len(base) == 0
        assert [m.vid for m in union.members] == [7]

    def test_empty_lane(self, bounds):
        union = build_cooperative_set_minmax([], 180.0, 120.0, 0.0, 4.0,
                                             10.0, 40.0, bounds, SpeedBounds(14, 33))
        assert len(union) == 0


class TestDisruptionMetric:
    def test_zero(self):
        assert disruption_metric(0.0, 0.0, 0.3) == 0.0

    def test_half_weight(self):
        assert disruption_metric(0.0, 5.0, 0.5) == pytest.approx(12.5)

    def test_rear_emphasis(self):
        assert disruption_metric(3.0, 4.0, 0.01) == pytest.approx(15.93)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            disruption_metric(1.0, 1.0, 1.5)


class TestPairQP:
    def test_unconstrained_projections_give_zero(self, bounds):
        # slot bounds 248.9 <= x_i and x_i1 <= 213.5 leave both projections free
        speeds = SpeedBounds(14, 33)
        sol = pair_terminal_qp(veh(1, 200, 25), veh(2, 60, 25), None,
                               xC_tf=230.0, vC_tf=29.0, t0=0.0, tf=4.0,
                               gamma=0.5, c_safety=SafetyParams(1.5, 0.6),
                               bounds=bounds, speeds=speeds)
        assert sol.feasible
        assert sol.d_star == pytest.approx(0.0, abs=1e-12)
        assert sol.delta_i == pytest.approx(0.0, abs=1e-9)
        assert sol.delta_i1 == pytest.approx(0.0, abs=1e-9)

    def test_single_active_rear_constraint(self, bounds):
        # rear projection 110, required gap 15 at its t0 speed, xC_tf = 120:
        # slot bound 105 -> delta = 5, D* = (1-gamma)*25 = 12.5 at gamma = 0.5
        speeds = SpeedBounds(5, 33)
        rear = veh(2, 20.0, 22.5, phi=0.6)   # d = 1.5 + 0.6*22.5 = 15
        xC_tf = 120.0
        sol = pair_terminal_qp(veh(1, 400, 25), rear, None, xC_tf, 25.0,
                               0.0, 4.0, 0.5, SafetyParams(1.5, 0.6),
                               bounds, speeds)
        assert sol.feasible
        assert sol.x_i1_f == pytest.approx(105.0, abs=1e-6)
        assert sol.delta_i1 == pytest.approx(5.0, abs=1e-6)
        assert sol.delta_i == pytest.approx(0.0, abs=1e-9)
        assert sol.d_star == pytest.approx(12.5, abs=1e-6)

    def test_infeasible_reports_blocking(self, bounds):
        # rear vehicle cannot fall back far enough in the short horizon
        speeds = SpeedBounds(14, 33)
        sol = pair_terminal_qp(veh(1, 300, 25), veh(2, 128, 29), None,
                               xC_tf=130.0, vC_tf=29.0, t0=0.0, tf=0.5,
                               gamma=0.5, c_safety=SafetyParams(1.5, 0.6),
                               bounds=bounds, speeds=speeds)
        assert not sol.feasible
        assert sol.blocking != ""
        assert math.isinf(sol.d_star)

    def test_qp_beats_brute_force_grid(self, bounds):
        rng = np.random.default_rng(11)
        speeds = SpeedBounds(10, 33)
        c_safety = SafetyParams(1.5, 0.6)
        for _ in range(40):
            v_i = rng.uniform(18, 30)
            v_i1 = rng.uniform(18, 30)
            head = rng.uniform(25, 90)
            x_i1 = rng.uniform(-40, 0)
            pair_i = veh(1, x_i1 + head, v_i, phi=rng.uniform(0.4, 0.9))
            pair_i1 = veh(2, x_i1, v_i1, phi=rng.uniform(0.4, 0.9))
            T = rng.uniform(1.0, 6.0)
            xC_tf = rng.uniform(x_i1 + 0.3 * head, x_i1 + 0.9 * head) + v_i1 * T
            vC_tf = rng.uniform(25, 31)
            gamma = rng.uniform(0.0, 1.0)
            leader = pair_i.state.x + rng.uniform(40, 200) + v_i * T
            sol = pair_terminal_qp(pair_i, pair_i1, leader, xC_tf, vC_tf,
                                   0.0, T, gamma, c_safety, bounds, speeds)
            # brute force over both reachable intervals on a 0.1 m grid
            from lanecoop.ocp import feasible_terminal_interval
            iv_i = feasible_terminal_interval(pair_i.state, 0.0, T, bounds, speeds)
            iv_i1 = feasible_terminal_interval(pair_i1.state, 0.0, T, bounds, speeds)
            from lanecoop.core import safe_distance, project_constant_speed
            gi = np.arange(iv_i.x_lo, iv_i.x_hi + 1e-9, 0.1)
            gi1 = np.arange(iv_i1.x_lo, iv_i1.x_hi + 1e-9, 0.1)
            proj_i = project_constant_speed(pair_i.state, 0.0, T)
            proj_i1 = project_constant_speed(pair_i1.state, 0.0, T)
            ok_i = gi[(gi >= xC_tf + safe_distance(vC_tf, c_safety))
                      & (gi <= leader - safe_distance(v_i + bounds.u_max * T, pair_i.safety))]
            ok_i1 = gi1[gi1 <= xC_tf - safe_distance(v_i1, pair_i1.safety)]
            if ok_i.size == 0 or ok_i1.size == 0:
                assert not sol.feasible
                continue
            di = proj_i - ok_i
            di1 = proj_i1 - ok_i1
            grid_best = (gamma * di ** 2).min() + ((1 - gamma) * di1 ** 2).min()
            assert sol.feasible
            assert sol.d_star <= grid_best + 1e-9
            max_delta = max(np.abs(di).max(), np.abs(di1).max(), 1.0)
            assert abs(sol.d_star - grid_best) <= 2 * max_delta * 0.1 + 0.01

    def test_zero_horizon_pins_positions(self, bounds):
        speeds = SpeedBounds(14, 33)
        sol = pair_terminal_qp(veh(1, 100, 25), veh(2, 40, 25), None,
                               xC_tf=70.0, vC_tf=29.0, t0=5.0, tf=5.0,
                               gamma=0.5, c_safety=SafetyParams(1.5, 0.6),
                               bounds=bounds, speeds=speeds)
        assert sol.feasible
        assert sol.x_i_f == pytest.approx(100.0)
        assert sol.x_i1_f == pytest.approx(40.0)
        assert sol.d_star == pytest.approx(0.0, abs=1e-12)


class TestSelection:
    def _sol(self, i, d):
        from lanecoop.cooperation import PairSolution
        return PairSolution(i, i + 1, 0.0, 0.0, 0.0, 0.0, d, feasible=True)

    def test_single_qualifying_pair(self):
        sols = [self._sol(1, 0.0)]
        assert select_optimal_pair(sols, 25.0).i_id == 1

    def test_minimum_wins(self):
        sols = [self._sol(1, 12.5), self._sol(2, 3.0), self._sol(3, 40.0)]
        assert select_optimal_pair(sols, 25.0).i_id == 2

    def test_threshold_filters_all(self):
        sols = [self._sol(1, 30.0), self._sol(2, 26.0)]
        assert select_optimal_pair(sols, 25.0) is None

    def test_tie_breaks_to_front(self):
        sols = [self._sol(1, 5.0), self._sol(2, 5.0)]
        assert select_optimal_pair(sols, 25.0).i_id == 1


class TestSetProperties:
    def test_window_monotonicity(self, bounds):
        rng = np.random.default_rng(3)
        for _ in range(25):
            lane = []
            x = 400.0
            for vid in range(8):
                x -= rng.uniform(20, 70)
                lane.append(veh(vid, x, rng.uniform(20, 30)))
            xU_tf, xC_tf = 280.0, 180.0
            small = build_cooperative_set(lane, xU_tf, xC_tf, 0.0, 4.0, 20.0, 40.0)
            large = build_cooperative_set(lane, xU_tf, xC_tf, 0.0, 4.0, 45.0, 80.0)
            assert set(m.vid for m in small.members) <= set(m.vid for m in large.members)

    def test_selected_pair_is_lane_adjacent(self, bounds):
        rng = np.random.default_rng(9)
        speeds = SpeedBounds(14, 33)
        for _ in range(20):
            lane = []
            x = 350.0
            for vid in range(6):
                x -= rng.uniform(30, 80)
                lane.append(veh(vid, x, rng.uniform(22, 30)))
            coop = build_cooperative_set(lane, 320.0, 160.0, 0.0, 4.0, 60.0, 120.0)
            if len(coop) < 2:
                continue
            sols = solve_all_pairs(coop, 160.0 + 25 * 4.0, 29.0, 0.0, 0.5,
                                   SafetyParams(1.5, 0.6), bounds, speeds)
            best = select_optimal_pair(sols, 1e9)
            if best is None:
                continue
            ids = [m.vid for m in coop.members]
            k = ids.index(best.i_id)
            assert ids[k + 1] == best.i1_id
            # adjacency in the full lane order as well
            lane_ids = [m.vid for m in sorted(lane, key=lambda m: -m.state.x)]
            kl = lane_ids.index(best.i_id)
            assert lane_ids[kl + 1] == best.i1_id

    def test_scaling_property(self, bounds):
        # doubling the rear shortfall scales the pair cost by 4 when the same
        # constraint stays active
        speeds = SpeedBounds(5, 33)
        c_safety = SafetyParams(1.5, 0.6)
        base_kw = dict(t0=0.0, tf=4.0, gamma=0.5, c_safety=c_safety,
                       bounds=bounds, speeds=speeds)
        rear = veh(2, 20.0, 20.0)
        required = safe = 1.5 + 0.6 * 20.0
        sol1 = pair_terminal_qp(veh(1, 400, 25), rear, None, 100.0 + safe - 0.0 + 2.0,
                                29.0, **base_kw)
        # construct shortfalls of 2 m and 4 m via the slot-behind bound
        xq1 = 100.0 + required - 2.0
        xq2 = 100.0 + required - 4.0
        s1 = pair_terminal_qp(veh(1, 500, 25), rear, None, xq1, 29.0, **base_kw)
        s2 = pair_terminal_qp(veh(1, 500, 25), rear, None, xq2, 29.0, **base_kw)
        assert s1.delta_i1 == pytest.approx(2.0, abs=1e-6)
        assert s2.delta_i1 == pytest.approx(4.0, abs=1e-6)
        assert s2.d_star == pytest.approx(4.0 * s1.d_star, rel=1e-9)


def test_set_rejects_unsorted_members():
    with pytest.raises(ValueError):
        CooperativeSet(members=(veh(1, 50, 20), veh(2, 80, 20)), t_f_star=4.0)
