import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from bistanet import global_learning as gl
from bistanet.dynamics import DriveSchedule, Pulse, SimOptions, simulate
from bistanet.errors import DisconnectedNetworkError, TrajectoryNotConvergedError
from bistanet.generators import gen_lattice, gradient_fixture
from bistanet.global_learning import (GlobalConfig, GlobalTask, finite_difference_gradient, loss, loss_gradient,
                                      pair_direction, pgd_step, project_gradient, settle, train_global)
from bistanet.network import FlowNetwork, check_laplacian

OPTS = SimOptions(t_max=200.0, dwell=2.0)
TIGHT = SimOptions(t_max=200.0, dwell=2.0, rtol=1e-10, atol=1e-12, tol_flux=1e-10)


def fixture_task(law, total=30.0):
    net = gradient_fixture()
    v0 = np.ones(net.n)
    sched = DriveSchedule(pulses=[Pulse(0, 0.0, 0.5, (total - v0.sum()) / 0.5)])
    return net, v0, sched


class TestLoss:
    def test_value(self):
        assert loss([np.array([1.0, 2.0]), np.array([0.0, 0.0])],
                    [np.array([1.0, 0.0]), np.array([1.0, 1.0])]) == pytest.approx((4 + 2) / 2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss([np.zeros(2)], [np.zeros(3)])

    def test_gradient_formula(self, law):
        net, v0, sched = fixture_task(law)
        tr = simulate(net, law, sched, v0, OPTS)
        target = np.full(4, 7.5)
        vss = tr.v[tr.steady_index()]
        k = tr.steady_index() + 1
        # trapezoid over the accepted samples as an independent route to the pressure integral
        P = trapezoid(tr.p[:k], tr.t[:k], axis=0)
        expected = 2.0 * np.outer(target - vss, P)
        np.testing.assert_allclose(loss_gradient([vss], [target], [tr]), expected, rtol=1e-3)

    def test_gradient_needs_settled_trajectory(self, law):
        net, v0, sched = fixture_task(law)
        tr = simulate(net, law, sched, v0, SimOptions(t_max=0.1))
        with pytest.raises(TrajectoryNotConvergedError):
            loss_gradient([tr.v[-1]], [tr.v[-1]], [tr])


class TestProjectedStep:
    @given(st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
    def test_step_stays_laplacian(self, eta, seed):
        W = gen_lattice(2, 3, full_connect=True).laplacian()
        G = np.random.default_rng(seed).normal(size=W.shape)
        check_laplacian(pgd_step(W, G, GlobalConfig(eta=eta)))

    def test_zero_gradient_keeps_w(self):
        W = gen_lattice(2, 2).laplacian()
        np.testing.assert_allclose(pgd_step(W, np.zeros_like(W), GlobalConfig(beta=0.0)), W)

    def test_pair_direction(self):
        E = pair_direction(3, 0, 2)
        check_laplacian(E)
        assert project_gradient(np.eye(3), 0, 2) == 2.0


class TestClosedNetworkSettling:
    def test_settled_volumes_ignore_conductance_scale(self, law):
        """Settled volumes of a closed network depend on the total volume and branch labels only."""
        net, v0, sched = fixture_task(law)
        task = GlobalTask(sched, np.full(4, 7.5))
        a, _ = settle(net, law, [task], v0, OPTS)
        b, _ = settle(net.with_conductance(net.conductance * 1.7), law, [task], v0, OPTS)
        np.testing.assert_allclose(a[0], b[0], atol=1e-5)

    def test_settled_volumes_closed_form(self, law):
        # two chambers on branch 1 and two on branch 0 at common p: 2 (5 + 2 p) + 2 p = 30
        net, v0, sched = fixture_task(law)
        v, _ = settle(net, law, [GlobalTask(sched, np.full(4, 7.5))], v0, TIGHT)
        p = 10.0 / 3.0
        np.testing.assert_allclose(v[0], [5 + 2 * p, 5 + 2 * p, p, p], atol=1e-8)

    def test_finite_differences_vanish(self, law):
        net, v0, sched = fixture_task(law)
        task = GlobalTask(sched, np.full(4, 7.5))
        D = finite_difference_gradient(net.laplacian(), law, [task], v0, TIGHT)
        assert np.abs(D).max() < 1e-5


class TestTraining:
    def test_volume_mismatch_rejected(self, law):
        net, v0, sched = fixture_task(law)
        with pytest.raises(ValueError):
            train_global(net, law, [GlobalTask(sched, np.ones(4))], v0)

    def test_pressure_clamps_rejected(self):
        with pytest.raises(ValueError):
            GlobalTask(DriveSchedule({0: 1.0}), np.ones(2))

    def test_reachable_target_converges_immediately(self, law, tmp_path):
        net, v0, sched = fixture_task(law)
        vss, _ = settle(net, law, [GlobalTask(sched, np.full(4, 7.5))], v0, OPTS)
        target = vss[0] + (30.0 - vss[0].sum()) / 4
        res = train_global(net, law, [GlobalTask(sched, target)], v0, GlobalConfig(sim=OPTS), out_dir=tmp_path)
        assert res.status == "converged" and res.iterations == 0
        assert (tmp_path / "loss_history.csv").read_text().startswith("iteration,loss")

    def test_stops_at_max_iter(self, law, tmp_path):
        net, v0, sched = fixture_task(law)
        target = np.array([27.0, 1.0, 1.0, 1.0])
        cfg = GlobalConfig(eta=1e-4, max_iter=2, sim=OPTS, checkpoint_every=1)
        res = train_global(net, law, [GlobalTask(sched, target)], v0, cfg, out_dir=tmp_path)
        assert res.status == "max_iter" and len(res.losses) == 3
        assert sorted(p.name for p in tmp_path.glob("W_*.json")) == ["W_00000.json", "W_00001.json", "W_00002.json"]

    def test_disconnection_reported(self, law, monkeypatch):
        net, v0, sched = fixture_task(law)
        monkeypatch.setattr(gl, "loss_gradient", lambda *a, **k: np.full((4, 4), -1e6))
        with pytest.raises(DisconnectedNetworkError) as info:
            train_global(net, law, [GlobalTask(sched, np.array([27.0, 1.0, 1.0, 1.0]))], v0,
                         GlobalConfig(sim=OPTS))
        assert info.value.iteration == 1

    def test_simulation_failure_status(self, law):
        net = FlowNetwork(2, np.array([[0, 1]]), np.array([1e-6]))
        sched = DriveSchedule(pulses=[Pulse(0, 0.0, 1.0, 2.0)])
        res = train_global(net, law, [GlobalTask(sched, np.array([3.0, 1.0]))], np.ones(2),
                           GlobalConfig(sim=SimOptions(t_max=5.0, dwell=1.0)))
        assert res.status == "simulation failed at iteration 0"
