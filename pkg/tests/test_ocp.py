import math

import numpy as np
import pytest

from lanecoop.core import (
    ControlBounds,
    ManeuverParams,
    SafetyParams,
    SpeedBounds,
    VehicleState,
    safe_distance,
)
from lanecoop.ocp import (
    SHAPE_ACCEL_ONLY,
    SHAPE_DECEL_THEN_ACCEL,
    SHAPE_DEGENERATE,
    InfeasibleOCP,
    UnreachableTarget,
    classify_shape,
    feasible_terminal_interval,
    free_time_cost_profile,
    margin_min,
    min_energy_fixed_time_free_endpoint_cost,
    solve_cav_c_free_time,
    solve_energy_fixed_endpoint,
    validate_cav_c_trajectory,
)
from lanecoop.oracle import CavCFixedTimeProblem, solve_discretized_oracle


class TestTerminalInterval:
    def test_accel_to_cap_then_hold(self):
        ti = feasible_terminal_interval(VehicleState(0, 20), 0.0, 4.0,
                                        ControlBounds(-7, 3.3), SpeedBounds(16, 33))
        assert ti.x_hi == pytest.approx(106.3939, abs=1e-3)

    def test_decel_to_floor_then_cruise(self):
        ti = feasible_terminal_interval(VehicleState(0, 20), 0.0, 4.0,
                                        ControlBounds(-7, 3.3), SpeedBounds(16, 33))
        assert ti.x_lo == pytest.approx(65.1429, abs=1e-3)

    def test_zero_horizon(self):
        ti = feasible_terminal_interval(VehicleState(12.0, 20), 5.0, 5.0,
                                        ControlBounds(-7, 3.3), SpeedBounds(16, 33))
        assert ti.x_lo == ti.x_hi == 12.0


class TestFixedEndpoint:
    def test_constant_speed_target_needs_no_control(self):
        tr = solve_energy_fixed_endpoint(VehicleState(0, 20), 0.0, 4.0, 80.0,
                                         ControlBounds(-7, 3.3), SpeedBounds(5, 40))
        assert tr.energy == pytest.approx(0.0, abs=1e-12)
        assert abs(tr.control(2.0)) < 1e-9

    def test_affine_costate_solution(self):
        # lam = 3(v0 T - dx)/T^3 = -0.375 -> u = 1.5 - 0.375 t, v(4) = 23, E = 1.5
        tr = solve_energy_fixed_endpoint(VehicleState(0, 20), 0.0, 4.0, 88.0,
                                         ControlBounds(-7, 3.3), SpeedBounds(5, 40))
        assert tr.position(4.0) == pytest.approx(88.0, abs=1e-6)
        assert tr.speed(4.0) == pytest.approx(23.0, abs=1e-6)
        assert tr.energy == pytest.approx(1.5, rel=1e-6)
        for t in (0.0, 2.0, 4.0):
            assert tr.control(t) == pytest.approx(1.5 - 0.375 * t, abs=1e-9)

    def test_control_affine_and_vanishing_at_tf(self):
        # free terminal speed -> costate transversality forces u(tf) = 0
        tr = solve_energy_fixed_endpoint(VehicleState(3.0, 22), 0.0, 5.0, 135.0,
                                         ControlBounds(-7, 3.3), SpeedBounds(5, 40))
        u0, u1, u2 = tr.control(0.0), tr.control(2.5), tr.control(5.0)
        assert u1 == pytest.approx(0.5 * (u0 + u2), abs=1e-9)
        assert u2 == pytest.approx(0.0, abs=1e-9)

    def test_reachability_edge_is_bang_then_hold(self):
        bounds = ControlBounds(-7, 3.3)
        speeds = SpeedBounds(16, 33)
        ti = feasible_terminal_interval(VehicleState(0, 20), 0.0, 4.0, bounds, speeds)
        assert ti.x_hi == pytest.approx(106.40, abs=0.01)
        tr = solve_energy_fixed_endpoint(VehicleState(0, 20), 0.0, 4.0, ti.x_hi,
                                         bounds, speeds)
        assert tr.position(4.0) == pytest.approx(ti.x_hi, abs=1e-4)
        assert tr.control(0.5) == pytest.approx(3.3, abs=1e-6)
        assert tr.speed(4.0) == pytest.approx(33.0, abs=1e-3)

    def test_unreachable_raises(self):
        with pytest.raises(UnreachableTarget):
            solve_energy_fixed_endpoint(VehicleState(0, 20), 0.0, 4.0, 140.0,
                                        ControlBounds(-7, 3.3), SpeedBounds(16, 33))


class TestMinEnergyFixedTime:
    def test_already_at_desired_speed(self, params, bounds, speeds, safety):
        c0 = VehicleState(0.0, 29.0)
        u0 = VehicleState(500.0, 16.0)
        energy, tr = min_energy_fixed_time_free_endpoint_cost(
            c0, u0, 0.0, 6.0, params, bounds, speeds, safety)
        assert energy == 0.0
        assert abs(tr.control(3.0)) < 1e-12

    def test_case3_relaxed_shape_and_terminal_speed(self, params, bounds, speeds, safety):
        c0 = VehicleState(865.0, 23.0)
        u0 = VehicleState(935.0, 16.0)
        energy, tr = min_energy_fixed_time_free_endpoint_cost(
            c0, u0, 0.0, 14.65, params, bounds, speeds, safety)
        assert classify_shape(tr) == SHAPE_DECEL_THEN_ACCEL
        assert tr.speed(14.65) == pytest.approx(30.6, abs=1.0)
        validate_cav_c_trajectory(tr, u0, params, bounds, speeds, safety)

    def test_small_synthetic_matches_oracle(self, bounds):
        speeds = SpeedBounds(10.0, 33.0)
        safety = SafetyParams(1.5, 0.6)
        params = ManeuverParams.with_derived_beta(
            bounds, alpha=0.4, v_d=20.0, delta_tol=1.0, T_th=20.0)
        c0 = VehicleState(0.0, 17.0)
        u0 = VehicleState(12.0, 16.0)
        energy, tr = min_energy_fixed_time_free_endpoint_cost(
            c0, u0, 0.0, 6.0, params, bounds, speeds, safety)
        prob = CavCFixedTimeProblem(c0, u0, 0.0, 6.0, tr.speed(6.0),
                                    bounds, speeds, safety)
        oracle = solve_discretized_oracle(prob)
        assert energy == pytest.approx(oracle.energy, rel=0.02)

    def test_infeasible_when_gap_hopeless(self, params, bounds, speeds, safety):
        # leader almost on top of C and very slow; C cannot reach 27+ in 2 s
        c0 = VehicleState(0.0, 16.0)
        u0 = VehicleState(safe_distance(16.0, safety) + 0.5, 16.0)
        with pytest.raises(InfeasibleOCP):
            min_energy_fixed_time_free_endpoint_cost(
                c0, u0, 0.0, 2.0, params, bounds, speeds, safety)

    def test_rejects_initially_violated_safety(self, params, bounds, speeds, safety):
        c0 = VehicleState(0.0, 20.0)
        u0 = VehicleState(5.0, 16.0)  # gap far below delta + phi*v
        with pytest.raises(InfeasibleOCP):
            min_energy_fixed_time_free_endpoint_cost(
                c0, u0, 0.0, 6.0, params, bounds, speeds, safety)


class TestFreeTime:
    def test_case1(self, params, bounds, speeds, safety):
        sol = solve_cav_c_free_time(VehicleState(272, 25), VehicleState(342, 16),
                                    0.0, params, bounds, speeds, safety)
        assert sol.shape == SHAPE_ACCEL_ONLY
        assert sol.tf_star == pytest.approx(3.58, rel=0.15)
        assert sol.terminal_speed == pytest.approx(30.9, abs=1.0)
        assert sol.tf_star <= params.T_th

    def test_case2(self, params, bounds, speeds, safety):
        sol = solve_cav_c_free_time(VehicleState(272, 17), VehicleState(290, 16),
                                    0.0, params, bounds, speeds, safety)
        assert sol.shape == SHAPE_DECEL_THEN_ACCEL
        assert sol.tf_star == pytest.approx(13.03, rel=0.15)
        # interior segment with no acceleration (the floor coast)
        coast = [a for a in sol.traj.arcs
                 if abs(a.u0) < 1e-9 and abs(a.du) < 1e-9 and a.duration > 0.5]
        assert coast, "expected an interior zero-acceleration segment"
        assert coast[0].t_start > sol.traj.t0
        assert coast[0].t_end < sol.traj.tf

    def test_degenerate_when_already_at_speed(self, params, bounds, speeds, safety):
        sol = solve_cav_c_free_time(VehicleState(0, 29), VehicleState(500, 16),
                                    0.0, params, bounds, speeds, safety)
        assert sol.shape == SHAPE_DEGENERATE
        assert sol.tf_star == 0.0
        assert sol.cost == 0.0

    def test_infeasible_reports_diagnostic(self, bounds, speeds, safety):
        tight = ManeuverParams.with_derived_beta(
            bounds, alpha=0.4, v_d=29.0, delta_tol=4.0, T_th=3.0)
        c0 = VehicleState(0.0, 16.0)
        u0 = VehicleState(12.0, 16.0)
        with pytest.raises(InfeasibleOCP) as err:
            solve_cav_c_free_time(c0, u0, 0.0, tight, bounds, speeds, safety)
        # a longer horizon would be feasible; the solver should report one
        assert err.value.smallest_feasible_tf is None or err.value.smallest_feasible_tf > 3.0

    def test_local_optimality_certificate_on_cases(self, params, bounds, speeds, safety):
        eps = 0.05
        for c0, u0 in [(VehicleState(272, 25), VehicleState(342, 16)),
                       (VehicleState(272, 17), VehicleState(290, 16))]:
            sol = solve_cav_c_free_time(c0, u0, 0.0, params, bounds, speeds, safety)
            g_star = free_time_cost_profile(c0, u0, 0.0, params, bounds, speeds,
                                            safety, sol.tf_star)
            assert sol.cost == pytest.approx(g_star, rel=1e-6, abs=1e-9)
            for sign in (-1.0, 1.0):
                g_side = free_time_cost_profile(c0, u0, 0.0, params, bounds,
                                                speeds, safety, sol.tf_star + sign * eps)
                assert g_side >= g_star - 1e-6

    def test_safety_margin_along_solution(self, params, bounds, speeds, safety):
        c0 = VehicleState(272, 25)
        u0 = VehicleState(342, 16)
        sol = solve_cav_c_free_time(c0, u0, 0.0, params, bounds, speeds, safety)
        assert margin_min(sol.traj, u0.x, u0.v, safety) >= -1e-6
        validate_cav_c_trajectory(sol.traj, u0, params, bounds, speeds, safety)


class TestRandomizedProperties:
    def test_fixed_endpoint_interval_consistency(self, bounds):
        rng = np.random.default_rng(123)
        speeds = SpeedBounds(5.0, 33.0)
        for _ in range(50):
            v0 = rng.uniform(6, 32)
            T = rng.uniform(0.5, 6.0)
            i0 = VehicleState(rng.uniform(-100, 100), v0)
            ti = feasible_terminal_interval(i0, 0.0, T, bounds, speeds)
            xf = rng.uniform(ti.x_lo, ti.x_hi)
            tr = solve_energy_fixed_endpoint(i0, 0.0, T, xf, bounds, speeds)
            assert tr.position(T) == pytest.approx(xf, abs=1e-5)
            for t in np.linspace(0, T, 23):
                assert bounds.u_min - 1e-6 <= tr.control(t) <= bounds.u_max + 1e-6
                assert speeds.v_min - 1e-6 <= tr.speed(t) <= speeds.v_max + 1e-6

    def test_free_time_certificate_fuzz(self, bounds):
        rng = np.random.default_rng(42)
        safety = SafetyParams(1.5, 0.6)
        solved = 0
        for _ in range(60):
            speeds = SpeedBounds(rng.uniform(8, 14), 33.0)
            vU = rng.uniform(14, 20)
            vC = rng.uniform(speeds.v_min, 30)
            gap = safe_distance(vC, safety) + rng.uniform(1, 80)
            params = ManeuverParams.with_derived_beta(
                bounds, alpha=rng.uniform(0.1, 0.7), v_d=rng.uniform(24, 31),
                delta_tol=4.0, T_th=20.0)
            c0 = VehicleState(0.0, vC)
            u0 = VehicleState(gap, vU)
            try:
                sol = solve_cav_c_free_time(c0, u0, 0.0, params, bounds, speeds, safety)
            except InfeasibleOCP:
                continue
            solved += 1
            if sol.shape == SHAPE_DEGENERATE:
                continue
            g_star = free_time_cost_profile(c0, u0, 0.0, params, bounds, speeds,
                                            safety, sol.tf_star)
            for sign in (-1.0, 1.0):
                g_side = free_time_cost_profile(c0, u0, 0.0, params, bounds,
                                                speeds, safety, sol.tf_star + sign * 0.05)
                assert g_side >= g_star - 1e-6
        assert solved > 20
