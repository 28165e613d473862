"""Control laws: outer loop, power projection, inner loop, PI baseline."""

import math

import numpy as np
import pytest

from phconv.controllers import (PhControllerGains, PhControllerState,
                                PiControllerGains, PiControllerState,
                                dvoc_current_reference, inner_current_loop,
                                outer_voltage_loop, ph_controller_step,
                                pi_controller_step, required_node_power)
from phconv.errors import GridCollapseError, ParameterError, SingularityError
from phconv.sim_engine import rk4_step


class TestOuterLoop:

    def test_zero_error_passes_load_current_through(self):
        assert outer_voltage_loop(800.0, 800.0, 500.0, 100.0) == 500.0

    def test_direct_evaluation(self):
        # 500 - (100 / 840) * 40 = 495.238...
        out = outer_voltage_loop(840.0, 800.0, 500.0, 100.0)
        assert out == pytest.approx(500.0 - 100.0 / 840.0 * 40.0, rel=1e-12)
        assert out == pytest.approx(495.2380952380952, rel=1e-12)

    def test_induced_dc_port_rate(self, rng):
        """With i_conv tracking the command exactly, v_dc (i_conv - i_load)
        = -k_v e_v, and the shifted storage C/2 e_v^2 decays at
        -(k_v / v_dc) e_v^2 <= 0."""
        for _ in range(25):
            v_dc = rng.uniform(400, 1000)
            i_load = rng.uniform(0, 1000)
            k_v = rng.uniform(10, 5000)
            e_v = v_dc - 800.0
            i_conv = outer_voltage_loop(v_dc, 800.0, i_load, k_v)
            assert v_dc * (i_conv - i_load) == pytest.approx(-k_v * e_v, rel=1e-12)
            assert e_v * (i_conv - i_load) == pytest.approx(
                -(k_v / v_dc) * e_v**2, rel=1e-12)
            assert e_v * (i_conv - i_load) <= 0.0

    def test_integral_augmentation(self):
        out = outer_voltage_loop(820.0, 800.0, 100.0, 50.0, a_v=10.0, int_v=2.0)
        assert out == pytest.approx(100.0 - (50.0 * 20.0 + 10.0 * 2.0) / 820.0)

    def test_guard(self):
        with pytest.raises(SingularityError):
            outer_voltage_loop(0.5, 800.0, 0.0, 100.0, v_dc_min=80.0)


class TestCurrentReference:

    def test_aligned_active_current(self):
        i = dvoc_current_reference(1000.0, 0.0, (100.0, 0.0), 1.0)
        assert np.allclose(i, (10.0, 0.0))

    def test_reactive_projection(self):
        # v = (0, 2): J v = (-2, 0); i = (2/4) * (-2, 0) = (-1, 0)
        i = dvoc_current_reference(0.0, 2.0, (0.0, 2.0), 0.1)
        assert np.allclose(i, (-1.0, 0.0))
        jv = np.array([-2.0, 0.0])
        assert jv @ i == pytest.approx(2.0)

    def test_zero_reactive_reference_is_parallel(self, rng):
        for _ in range(25):
            v = rng.normal(scale=300, size=2)
            if np.hypot(*v) < 30:
                continue
            i = dvoc_current_reference(rng.uniform(1, 1e6), 0.0, v, 1.0)
            cross = v[0] * i[1] - v[1] * i[0]
            assert abs(cross) <= 1e-9 * np.linalg.norm(i) * np.linalg.norm(v)

    def test_power_identities(self, rng):
        for _ in range(200):
            v = rng.normal(scale=250, size=2)
            if np.hypot(*v) < 25:
                continue
            p_ref = rng.uniform(-1e6, 1e6)
            q_ref = rng.uniform(-1e6, 1e6)
            i = dvoc_current_reference(p_ref, q_ref, v, 20.0)
            scale = max(1.0, abs(p_ref), abs(q_ref))
            assert abs(v @ i - p_ref) <= 1e-12 * scale
            jv = np.array([-v[1], v[0]])
            assert abs(jv @ i - q_ref) <= 1e-12 * scale

    def test_collapse_guard(self):
        with pytest.raises(GridCollapseError):
            dvoc_current_reference(1000.0, 0.0, (1.0, 1.0), 20.0)


class TestRequiredNodePower:

    def test_accounts_for_conversion_and_filter_loss(self):
        p = required_node_power(625.0, 800.0, (1000.0, 0.0), 0.0015, 0.98)
        assert p == pytest.approx(1.02 * 800.0 * 625.0 + 0.0015 * 1e6, rel=1e-12)

    def test_lossless_limit(self):
        assert required_node_power(625.0, 800.0, (0.0, 0.0), 0.0, 1.0) \
            == pytest.approx(500e3)


class TestInnerLoop:

    def test_feedforward_only_at_zero_error(self):
        i = (100.0, -50.0)
        e = inner_current_loop(i, i, (0.0, 0.0), (380.0, 10.0),
                               r_f=0.0015, l_f=30e-6, k_i=4000.0)
        assert np.allclose(e, (380.0 - 0.0015 * 100.0, 10.0 + 0.0015 * 50.0))

    def test_damping_sign(self):
        """Positive alpha error raises e_alpha above the feedforward value,
        pushing the current back down toward the reference."""
        base = inner_current_loop((100.0, 0.0), (100.0, 0.0), (0.0, 0.0),
                                  (380.0, 0.0), 0.0015, 30e-6, 4000.0)
        high = inner_current_loop((110.0, 0.0), (100.0, 0.0), (0.0, 0.0),
                                  (380.0, 0.0), 0.0015, 30e-6, 4000.0)
        # same feedforward current term removed for a clean comparison
        assert high[0] + 0.0015 * 110.0 > base[0] + 0.0015 * 100.0

    def _simulate_error_decay(self, k_i, l_f=30e-6, r_f=0.0015, steps=2000,
                              h=1e-6):
        """Filter loop with frozen reference and constant node voltage."""
        i_ref = np.array([40.0, -10.0])
        v_ac = np.array([380.0, 20.0])
        i = i_ref + np.array([1.0, 0.0])  # e_i(0) = (1, 0)

        def f(t, x):
            e = inner_current_loop(x, i_ref, (0.0, 0.0), v_ac, r_f, l_f, k_i)
            return (v_ac - e - r_f * x) / l_f

        ts, norms = [], []
        for k in range(steps):
            ts.append(k * h)
            norms.append(np.hypot(*(i - i_ref)))
            i = rk4_step(f, i, k * h, h)
        return np.array(ts), np.array(norms)

    def test_exponential_decay_value(self):
        """|e_i(1/k_i)| = exp(-1) within 1 % (integration error only)."""
        k_i = 4000.0
        ts, norms = self._simulate_error_decay(k_i, steps=251, h=1e-6)
        k_at = int(round(1.0 / k_i / 1e-6))
        assert norms[k_at] == pytest.approx(math.exp(-1.0), rel=0.01)

    def test_log_linear_fit_recovers_decay_rate(self):
        k_i = 4000.0
        ts, norms = self._simulate_error_decay(k_i, steps=1000, h=1e-6)
        slope = np.polyfit(ts, np.log(norms), 1)[0]
        assert slope == pytest.approx(-k_i, rel=0.02)


class TestPhControllerStep:

    def _gains(self):
        return PhControllerGains(v_dc_ref=800.0, v_ac_min=19.6)

    def test_integral_terms_do_not_affect_output_when_disabled(self, plant):
        """a_v = m_i = 0: integrator states evolve but leave e untouched."""
        g = self._gains()
        meas = dict(v_dc=812.0, i_f=(900.0, -100.0), i_load=630.0)
        s1 = PhControllerState(int_v=0.0, int_i=(0.0, 0.0),
                               ref_filt=(850.0, -90.0), v_meas=(385.0, 12.0))
        s2 = PhControllerState(int_v=55.0, int_i=(17.0, -3.0),
                               ref_filt=(850.0, -90.0), v_meas=(385.0, 12.0))
        o1 = ph_controller_step(state=s1, gains=g, plant=plant, omega=377.0, **meas)
        o2 = ph_controller_step(state=s2, gains=g, plant=plant, omega=377.0, **meas)
        assert o1.e == o2.e
        assert o1.i_f_ref == o2.i_f_ref
        # the integrator dynamics themselves keep running
        assert o2.d_int_v == o1.d_int_v == 12.0

    def test_controller_dissipation_identity(self, plant, rng):
        """The controller storage rate plus the error-port powers equals
        -k_v e_v^2 - k_i L_f |e_i|^2 <= 0 at every evaluation."""
        g = PhControllerGains(v_dc_ref=800.0, v_ac_min=19.6, a_v=5.0, m_i=100.0)
        for _ in range(25):
            v_dc = rng.uniform(700, 900)
            i_f = rng.normal(scale=800, size=2)
            st = PhControllerState(
                int_v=rng.normal(), int_i=tuple(rng.normal(size=2)),
                ref_filt=tuple(rng.normal(scale=800, size=2)),
                v_meas=tuple(rng.normal(scale=100, size=2) + (380.0, 0.0)))
            out = ph_controller_step(v_dc, tuple(i_f), rng.uniform(0, 900),
                                     st, g, plant, omega=377.0)
            e_v = v_dc - g.v_dc_ref
            e_i = i_f - np.array(out.i_f_ref)
            tau_dc = -g.k_v * e_v - g.a_v * st.int_v
            tau_ac = -plant.l_f * (g.k_i * e_i + g.m_i * np.array(st.int_i))
            hdot_c = g.a_v * st.int_v * e_v \
                + plant.l_f * g.m_i * np.array(st.int_i) @ e_i
            balance = hdot_c + e_v * tau_dc + e_i @ tau_ac
            expected = -g.k_v * e_v**2 - g.k_i * plant.l_f * (e_i @ e_i)
            assert balance == pytest.approx(expected, rel=1e-9, abs=1e-9)
            assert expected <= 0.0

    def test_guard_propagation(self, plant):
        g = self._gains()
        st = PhControllerState(v_meas=(0.1, 0.1), ref_filt=(0.0, 0.0))
        with pytest.raises(GridCollapseError):
            ph_controller_step(800.0, (0.0, 0.0), 0.0, st, g, plant, omega=377.0)


class TestPiController:

    def test_zero_error_with_preloaded_integrators_is_pure_feedforward(self):
        """At theta = 0 with exact current tracking the output is the
        measured voltage plus decoupling, no PI correction."""
        g = PiControllerGains(v_dc_ref=800.0)
        i_d = 500.0
        st = PiControllerState(int_v=i_d / g.ki_v, int_dq=(0.0, 0.0),
                               v_meas=(380.0, 5.0))
        out = pi_controller_step(800.0, (i_d, 0.0), st, g, theta=0.0,
                                 omega=377.0, l_f=30e-6)
        assert out.i_dq_ref[0] == pytest.approx(i_d)
        assert not out.ref_limited
        # e_d = vm_d + w L_f i_q - 0; e_q = vm_q - w L_f i_d
        assert out.e[0] == pytest.approx(380.0)
        assert out.e[1] == pytest.approx(5.0 - 377.0 * 30e-6 * i_d)

    def test_matches_discrete_integrator_oracle(self, rng):
        """Euler-integrating the returned integrator rates reproduces an
        independently accumulated discrete PI state."""
        g = PiControllerGains(v_dc_ref=800.0)
        h = 1e-4
        int_v = 0.0
        acc = 0.0
        for k in range(200):
            v_dc = 800.0 + 20.0 * math.sin(0.05 * k)
            st = PiControllerState(int_v=int_v, v_meas=(380.0, 0.0))
            out = pi_controller_step(v_dc, (0.0, 0.0), st, g, theta=0.0,
                                     omega=377.0, l_f=30e-6)
            int_v += h * out.d_int_v
            if not out.ref_limited:
                acc += h * (g.v_dc_ref - v_dc)
            assert int_v == pytest.approx(acc, rel=1e-12, abs=1e-12)

    def test_anti_windup_freezes_integrator(self):
        g = PiControllerGains(v_dc_ref=800.0, kp_v=10.0, i_limit=100.0)
        st = PiControllerState(int_v=0.0, v_meas=(380.0, 0.0))
        out = pi_controller_step(700.0, (0.0, 0.0), st, g, theta=0.0,
                                 omega=377.0, l_f=30e-6)
        assert out.ref_limited
        assert out.i_dq_ref[0] == 100.0
        assert out.d_int_v == 0.0

    def test_gain_validation(self):
        with pytest.raises(ParameterError):
            PiControllerGains(kp_v=-1.0)
        with pytest.raises(ParameterError):
            PiControllerGains(i_limit=0.0)
        with pytest.raises(ParameterError):
            PhControllerGains(k_v=0.0)
        with pytest.raises(ParameterError):
            PhControllerGains(tau_d=-1.0)
