import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from bistanet.dynamics import SimOptions
from bistanet.errors import InfeasibleTargetError
from bistanet.generators import gen_disordered, gen_lattice
from bistanet.law import DEFAULT_LAW, BistableLaw
from bistanet.local_learning import (LocalConfig, LocalTask, PhaseState, apply_update, clamped_target_pressures,
                                     conductance_update, conductance_update_matrix, fast_steady_update, free_phase,
                                     initial_state, snap_down_pressure, train_local)
from bistanet.steady import pressures_mixed_bc
from strategies import connected_networks


def simple_task(target_p=3.0, target_b=0):
    return LocalTask((0, 8), (8.0, 0.0), (4,), (target_p,), (target_b,))


class TestTask:
    def test_infeasible_target(self, law):
        with pytest.raises(InfeasibleTargetError):
            LocalTask((0,), (1.0,), (1,), (6.0,), (0,)).check(law)
        with pytest.raises(InfeasibleTargetError):
            LocalTask((0,), (1.0,), (1,), (1.0,), (1,)).check(law)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            LocalTask((0,), (1.0,), (0,), (1.0,), (0,))

    def test_target_volumes(self, law):
        task = LocalTask((0,), (8.0,), (1, 2), (5.0, 1.0), (1, 0))
        np.testing.assert_allclose(task.target_volumes(law), [15.0, 1.0])

    def test_config_checks(self):
        with pytest.raises(ValueError):
            LocalConfig(eta=0.0)
        with pytest.raises(ValueError):
            LocalConfig(alpha1=0.9)


class TestClampRules:
    def state(self, p_out, b_out):
        p = np.zeros(5)
        b = np.zeros(5, dtype=int)
        p[4], b[4] = p_out, b_out
        return PhaseState(p, np.zeros(5), b)

    def test_nudge(self, law):
        pc, _ = clamped_target_pressures(self.state(4.0, 0), simple_task(3.0, 0), law, LocalConfig(eta=0.25))
        assert pc.tolist() == [4.0 + 0.25 * (3.0 - 4.0)]

    def test_snap_up(self, law):
        pc, _ = clamped_target_pressures(self.state(4.0, 0), simple_task(3.0, 1), law, LocalConfig(alpha1=1.2))
        assert pc.tolist() == [pytest.approx(6.0)]

    def test_snap_down(self, law):
        pc, _ = clamped_target_pressures(self.state(4.0, 1), simple_task(3.0, 0), law, LocalConfig(alpha2=0.8))
        assert pc.tolist() == [pytest.approx(1.6)]

    def test_snap_down_nonpositive_minimum(self):
        law = BistableLaw.trilinear(v_max=5, p_max=2, v_min=9, p_min=-1, slope0=0.4)
        p = snap_down_pressure(law, 0.8)
        assert p == pytest.approx(-1 - 0.2 * 3)
        assert p < law.p_min


class TestConductanceUpdate:
    def test_hand_value(self):
        net = gen_lattice(1, 2)
        cfg = LocalConfig(eta=0.5, gamma=0.1)
        # 0.1 / (2 * 0.5) * ((3 - 1)^2 - (3 - 2)^2) = 0.3
        dC = conductance_update(net, np.array([3.0, 1.0]), np.array([3.0, 2.0]), cfg)
        assert dC.tolist() == [pytest.approx(0.3)]

    @given(connected_networks(), st.integers(0, 2**31 - 1))
    def test_matrix_form_matches_edges(self, net, seed):
        r = np.random.default_rng(seed)
        pf, pc = r.normal(size=net.n), r.normal(size=net.n)
        cfg = LocalConfig()
        D = conductance_update_matrix(pf, pc, cfg)
        i, j = net.edges.T
        np.testing.assert_allclose(D[i, j], conductance_update(net, pf, pc, cfg), rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(D, D.T)

    def test_clipping(self):
        net = gen_lattice(1, 3)
        cfg = LocalConfig(c_min=0.5, c_max=1.5)
        out, clips = apply_update(net, np.array([-2.0, 2.0]), cfg)
        assert out.conductance.tolist() == [0.5, 1.5] and clips == 2


def output_cost(net, task):
    p = pressures_mixed_bc(net.laplacian(), task.free_bc).p
    return 0.5 * float(np.sum((p[list(task.outputs)] - np.array(task.target_pressures)) ** 2))


class TestGradientLimit:
    @settings(max_examples=20)
    @given(st.integers(0, 1000))
    def test_small_nudge_is_descent_direction(self, seed):
        """With a vanishing nudge the update points downhill on the squared output pressure error."""
        net = gen_disordered(12, seed)
        task = LocalTask((0, 1), (6.0, 0.0), (5, 7), (1.0, 4.0), (0, 0))
        cfg = LocalConfig(eta=1e-6, gamma=1.0)
        pf = pressures_mixed_bc(net.laplacian(), task.free_bc).p
        out = list(task.outputs)
        bc = task.free_bc
        bc.update(zip(out, pf[out] + cfg.eta * (np.array(task.target_pressures) - pf[out])))
        pc = pressures_mixed_bc(net.laplacian(), bc).p
        dC = conductance_update(net, pf, pc, cfg)
        h = 1e-6
        fd = np.empty(net.m)
        for e in range(net.m):
            up, dn = net.conductance.copy(), net.conductance.copy()
            up[e] += h
            dn[e] -= h
            fd[e] = (output_cost(net.with_conductance(up), task) - output_cost(net.with_conductance(dn), task)) / (2 * h)
        assume(np.abs(fd).max() > 1e-6)  # outputs cut off from the inlets
        assert float(dC @ -fd) > 0.0


class TestPhases:
    def test_fast_path_matches_integration(self, law):
        net = gen_disordered(15, 2)
        task = LocalTask((0, 3), (8.0, 0.0), (6,), (3.0,), (0,))
        start = initial_state(net, law, 1.0)
        cfg = LocalConfig(sim=SimOptions(t_max=1e5, dwell=20.0, tol_flux=1e-10, rtol=1e-9, atol=1e-11))
        ode = free_phase(net, law, task, start, cfg, use_ode=True)
        fast = fast_steady_update(net.laplacian(), task.free_bc, ode.binary, law)
        np.testing.assert_allclose(fast.p, ode.p, atol=1e-6)
        np.testing.assert_array_equal(fast.binary, ode.binary)

    def test_initial_state(self, law):
        s = initial_state(gen_lattice(1, 3), law, 2.0)
        assert s.v.tolist() == [2.0] * 3 and s.binary.tolist() == [0] * 3


class TestTraining:
    def setup_method(self):
        self.net = gen_disordered(20, 0)
        # node 8 sits between the inlet and the grounded node
        self.task = LocalTask((0, 1), (8.0, 0.0), (8,), (3.0,), (0,))

    def test_deterministic(self, law):
        cfg = LocalConfig(max_iter=15)
        a = train_local(self.net, law, [self.task], cfg)
        b = train_local(self.net, law, [self.task], cfg)
        assert a.errors == b.errors and a.net == b.net

    def test_history_and_callback(self, law, tmp_path):
        seen = []
        res = train_local(self.net, law, [self.task], LocalConfig(max_iter=5),
                          callback=lambda s, net, frees: seen.append(s))
        assert len(res.errors) == len(res.history) == len(seen) == res.iterations + 1
        res.write_error_csv(tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "iteration,error,snapped,clip_events"
        assert min(res.errors) <= res.errors[0]

    def test_already_solved(self, law):
        first = train_local(self.net, law, [self.task], LocalConfig(max_iter=0))
        p_out = first.history[0].output_pressure[0][0]
        task = LocalTask((0, 1), (8.0, 0.0), (8,), (p_out,), (first.history[0].output_binary[0][0],))
        res = train_local(self.net, law, [task], LocalConfig())
        assert res.status == "converged" and res.iterations == 0

    def test_error_decreases_in_nudge_regime(self, law):
        res = train_local(self.net, law, [self.task], LocalConfig(max_iter=40, gamma=0.05))
        assert res.errors[-1] < res.errors[0]
