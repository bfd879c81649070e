import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from bistanet.dynamics import (DriveSchedule, Pulse, SimOptions, detect_steady, rhs, simulate,
                               simulate_phases, spectral_bound)
from bistanet.errors import LawDomainError
from bistanet.generators import four_node, gen_lattice
from bistanet.law import DEFAULT_LAW
from bistanet.network import FlowNetwork
from bistanet.steady import pressures_mixed_bc
from strategies import connected_networks


def pair(c=1.0):
    return FlowNetwork(2, np.array([[0, 1]]), np.array([c]))


def test_unknown_method():
    with pytest.raises(ValueError):
        SimOptions(method="Euler")


class TestSchedule:
    def test_pulse_volume(self):
        pl = Pulse(0, 1.0, 3.0, 2.0)
        assert [pl.volume(t) for t in (0.0, 2.0, 5.0)] == [0.0, 2.0, 4.0]

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            DriveSchedule(pulses=[Pulse(0, 0, 2, 1), Pulse(0, 1, 3, 1)])

    def test_clamp_and_pulse_conflict(self):
        with pytest.raises(ValueError):
            DriveSchedule({0: 1.0}, [Pulse(0, 0, 1, 1)])

    def test_out_of_range_node(self):
        with pytest.raises(ValueError):
            simulate(pair(), DEFAULT_LAW, DriveSchedule({5: 1.0}), np.ones(2))

    def test_breakpoints_and_drive(self):
        s = DriveSchedule(pulses=[Pulse(0, 0.0, 1.0, 2.0), Pulse(1, 0.5, 2.0, -1.0)])
        assert s.breakpoints() == [0.5, 1.0, 2.0]
        assert s.settle_from == 2.0
        assert s.q(0.75, 3).tolist() == [2.0, -1.0, 0.0]
        assert s.injected(10.0) == pytest.approx(0.5)


class TestLinearRegime:
    def test_pair_relaxation(self):
        # p = v on branch 0: d(v1 - v2)/dt = -2 C (v1 - v2)
        tr = simulate(pair(0.5), DEFAULT_LAW, DriveSchedule(), np.array([4.0, 1.0]),
                      SimOptions(t_max=5.0, stop_at_steady=False, rtol=1e-10, atol=1e-12))
        expected = 3.0 * np.exp(-tr.t)
        np.testing.assert_allclose(tr.v[:, 0] - tr.v[:, 1], expected, atol=1e-8)

    def test_pressure_integral(self):
        # v1 = 2.5 + 1.5 e^{-t}: int_0^T v1 dt = 2.5 T + 1.5 (1 - e^{-T})
        tr = simulate(pair(0.5), DEFAULT_LAW, DriveSchedule(), np.array([4.0, 1.0]),
                      SimOptions(t_max=3.0, stop_at_steady=False, rtol=1e-10, atol=1e-12, max_step=0.01))
        got = tr.pressure_integral(3.0)[0]
        assert got == pytest.approx(2.5 * 3 + 1.5 * (1 - np.exp(-3.0)), rel=1e-8)

    @pytest.mark.parametrize("method", ["RK45", "LSODA", "Radau"])
    def test_pressure_integral_any_method(self, method):
        tr = simulate(pair(0.5), DEFAULT_LAW, DriveSchedule(), np.array([4.0, 1.0]),
                      SimOptions(t_max=3.0, stop_at_steady=False, rtol=1e-10, atol=1e-12, method=method))
        assert tr.pressure_integral()[1] == pytest.approx(2.5 * 3 - 1.5 * (1 - np.exp(-3.0)), rel=1e-7)


def reference_final(net, law, schedule, v0, t_end):
    """Oracle: implicit Radau on the full state with the same right-hand side."""
    sol = solve_ivp(lambda t, v: rhs(net, law, np.maximum(v, 0), schedule, t), (0.0, t_end), v0,
                    method="Radau", rtol=1e-10, atol=1e-12, max_step=0.05)
    return sol.y[:, -1]


class TestAgainstImplicitIntegrator:
    def test_four_node_pressure_drive(self, law):
        net = four_node(1, 2, 2, 1)
        sched = DriveSchedule({0: 8.0, 3: 0.0})
        v0 = np.array([0.0, 3.0, 11.0, 0.0])
        tr = simulate(net, law, sched, v0, SimOptions(t_max=30.0, stop_at_steady=False, rtol=1e-9, atol=1e-11))
        ref = reference_final(net, law, sched, tr.v[0], 30.0)
        np.testing.assert_allclose(tr.v[-1][[1, 2]], ref[[1, 2]], atol=1e-6)

    def test_lattice_with_pulse(self, law):
        net = gen_lattice(2, 3)
        sched = DriveSchedule(pulses=[Pulse(0, 0.0, 2.0, 6.0)])
        v0 = np.ones(6)
        tr = simulate(net, law, sched, v0, SimOptions(t_max=20.0, stop_at_steady=False, rtol=1e-9, atol=1e-11))
        ref = reference_final(net, law, sched, v0, 20.0)
        np.testing.assert_allclose(tr.v[-1], ref, atol=1e-6)


@st.composite
def driven_problems(draw):
    net = draw(connected_networks(min_nodes=2, max_nodes=6))
    k = draw(st.integers(1, min(3, net.n)))
    pulses = []
    for node in draw(st.lists(st.integers(0, net.n - 1), min_size=k, max_size=k, unique=True)):
        t0 = draw(st.floats(0.0, 2.0))
        pulses.append(Pulse(node, t0, t0 + draw(st.floats(0.1, 2.0)), draw(st.floats(0.5, 5.0))))
    v0 = np.array(draw(st.lists(st.floats(0.5, 12.0), min_size=net.n, max_size=net.n)))
    return net, DriveSchedule(pulses=pulses), v0


class TestConservation:
    @settings(max_examples=25)
    @given(driven_problems())
    def test_volume_balance(self, problem):
        net, sched, v0 = problem
        tr = simulate(net, DEFAULT_LAW, sched, v0, SimOptions(t_max=20.0, stop_at_steady=False))
        assert tr.conservation_error().max() <= 1e-6 * tr.V_total.max()
        expected = np.array([sched.injected(t) for t in tr.t])
        np.testing.assert_allclose(tr.injected, expected, atol=1e-9 * max(1.0, expected.max()))

    def test_clamped_flux_accounted(self, law):
        net = four_node(1, 1, 1, 1)
        tr = simulate(net, law, DriveSchedule({0: 8.0, 3: 0.0}), np.array([1.0, 2.0, 3.0, 0.0]),
                      SimOptions(t_max=50.0))
        assert tr.conservation_error().max() <= 1e-6 * tr.V_total.max()


class TestSteadyDetection:
    def test_reaches_mixed_bc_pressures(self, law):
        net = four_node(1, 3, 2, 1)
        bc = {0: 8.0, 3: 0.0}
        tr = simulate(net, law, DriveSchedule(bc), np.array([1.0, 1.0, 1.0, 1.0]),
                      SimOptions(t_max=500.0, dwell=5.0, tol_flux=1e-9))
        assert tr.status == "steady"
        np.testing.assert_allclose(tr.p[-1], pressures_mixed_bc(net.laplacian(), bc).p, atol=1e-6)

    def test_waits_for_last_pulse(self, law):
        sched = DriveSchedule(pulses=[Pulse(0, 5.0, 6.0, 1.0)])
        tr = simulate(pair(), law, sched, np.array([2.0, 2.0]), SimOptions(t_max=100.0, dwell=1.0))
        assert tr.steady_time >= 6.0

    def test_detect_steady_matches_run(self, law):
        opts = SimOptions(t_max=100.0, dwell=2.0)
        tr = simulate(pair(), law, DriveSchedule(), np.array([4.0, 1.0]), opts)
        assert detect_steady(tr, opts.tol_flux, opts.dwell_time) == tr.steady_time

    def test_no_steady_within_cap(self, law):
        tr = simulate(pair(0.01), law, DriveSchedule(), np.array([4.0, 1.0]), SimOptions(t_max=1.0))
        assert tr.steady_time is None and tr.status == "t_max"


class TestFailures:
    def test_draining_below_zero(self, law):
        sched = DriveSchedule(pulses=[Pulse(0, 0.0, 10.0, -5.0)])
        with pytest.raises(LawDomainError):
            simulate(pair(), law, sched, np.array([1.0, 1.0]), SimOptions(t_max=20.0))

    def test_negative_initial_volume(self, law):
        with pytest.raises(ValueError):
            simulate(pair(), law, DriveSchedule(), np.array([-1.0, 1.0]))


def test_phases_chain_state(law):
    sched = [DriveSchedule(pulses=[Pulse(0, 0.0, 1.0, 10.0)]), DriveSchedule()]
    runs = simulate_phases(pair(), law, sched, np.array([1.0, 1.0]), SimOptions(t_max=50.0, dwell=1.0))
    np.testing.assert_array_equal(runs[1].v[0], runs[0].v[-1])


def test_spectral_bound(law):
    # eigenvalues of the pair Laplacian are 0 and 2 C; steepest law slope is 1
    assert spectral_bound(pair(3.0).laplacian(), law) == pytest.approx(6.0)


def test_csv_outputs(tmp_path, law):
    net = four_node(1, 1, 1, 1)
    tr = simulate(net, law, DriveSchedule({0: 8.0, 3: 0.0}), np.ones(4), SimOptions(t_max=10.0))
    tr.to_csv(tmp_path / "t.csv")
    tr.flux_to_csv(tmp_path / "f.csv", net)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0].split(",")[:3] == ["t", "v_1", "v_2"]
    assert len(rows) == len(tr) + 1
    assert len((tmp_path / "f.csv").read_text().splitlines()) == len(tr) * net.m + 1
