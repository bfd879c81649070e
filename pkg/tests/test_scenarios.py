import json

import numpy as np
import pytest

from bistanet.law import DEFAULT_LAW
from bistanet.scenarios import (Scenario, builtin_names, global_lattice_setup, load_scenario, local_setup,
                                run_four_node, run_memory, run_scenario, snap_target)


def test_catalog():
    names = builtin_names()
    for name in ("four_node_equal_ratios", "four_node_ratio_lt", "four_node_ratio_gt", "memory_demo",
                 "lattice_global", "fig4a", "fig4b", "fig5"):
        assert name in names
        assert load_scenario(name).name == name


def test_unknown_scenario():
    with pytest.raises(ValueError):
        load_scenario("nope")


def test_scenario_file_round_trip(tmp_path):
    sc = load_scenario("fig4a")
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    assert load_scenario(str(path)).to_dict() == sc.to_dict()


def test_four_node_outputs(tmp_path):
    res, eqs, finals = run_four_node(load_scenario("four_node_equal_ratios"), tmp_path, threads=2)
    assert res.summary["equilibria"] == 9 and res.summary["stable"] == 4
    assert (tmp_path / "equilibria.json").exists() and (tmp_path / "phase_portrait.csv").exists()
    assert len(finals) == 20


def test_four_node_thread_count_does_not_matter():
    sc = load_scenario("four_node_ratio_lt")
    _, _, a = run_four_node(sc, None, threads=1)
    _, _, b = run_four_node(sc, None, threads=3)
    np.testing.assert_array_equal(np.array(a), np.array(b))


def test_memory_writes_histories(tmp_path):
    res, runs = run_memory(load_scenario("memory_demo"), tmp_path)
    assert res.summary["distinct"]
    assert len(list(tmp_path.glob("history*_phase*.csv"))) == 4


def test_snap_target(law):
    v = snap_target(law, 9, 4, 30.0)
    assert v.sum() == pytest.approx(30.0, rel=1e-12)
    assert law.binary(v).tolist() == [0, 0, 0, 0, 1, 0, 0, 0, 0]
    # common pressure p: 8 p + 9 + 2 (p - 2) = 30
    np.testing.assert_allclose(law.pressure(v), 2.5, atol=1e-9)


def test_global_setup_is_seeded():
    sc = load_scenario("lattice_global")
    assert global_lattice_setup(sc, 3)[5] == global_lattice_setup(sc, 3)[5]
    assert all(global_lattice_setup(sc, s)[5] != 0 for s in range(10))


def test_local_setup_roles():
    net, law, tasks, cfg = local_setup(load_scenario("fig4a"))
    c = net.counts()
    assert (c["n"], c["b1"], c["t"]) == (150, 2, 2)
    assert set(tasks[0].inlets) == set(net.nodes_with_role("boundary_pressure").tolist())


def test_fig5_targets_from_volumes():
    _, law, tasks, _ = local_setup(load_scenario("fig5"))
    assert [t.target_binary for t in tasks] == [(0,), (0,), (0,), (1,)]
    assert [t.target_pressures for t in tasks] == [(2.0,), (3.0,), (4.0,), (5.0,)]


def test_unknown_kind():
    with pytest.raises(ValueError):
        run_scenario(Scenario("x", "weird"))
