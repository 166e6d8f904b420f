import copy
import json
import os

import numpy as np
import pytest
import yaml

from coalctrl.harness import (ConfigError, FatalSynthesisError,
                              NumericalAbortError, echo_config, export_trace,
                              load_config, load_gains, load_steps, metrics,
                              resolve_config, run, save_gains, synthesize_all)
from coalctrl.harness.cli import main
from coalctrl.harness.store import StoreError
from coalctrl.harness.trace import steps_header

from conftest import bundled_config_path, bundled_raw, decoupled_raw


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def test_bundled_platoon_config_values(platoon_config):
    cfg = platoon_config
    assert cfg.plant.n_agents == 4
    assert cfg.dt == 0.01
    assert cfg.switch_steps == 100
    assert cfg.kappa_steps == pytest.approx(100.0)
    assert cfg.link_cost == 2.4
    assert cfg.epsilon == 0.01
    assert np.array_equal(cfg.q_x, np.eye(12))
    assert np.array_equal(cfg.r, 0.1 * np.eye(4))
    assert np.array_equal(cfg.q_e, 0.1 * np.eye(12))
    assert cfg.link_universe == ((0, 1), (1, 2), (2, 3))
    assert np.allclose(cfg.x0[:3], [5.0, 4.5, 2.5])
    assert np.allclose(cfg.x_hat0 - cfg.x0, np.tile([0, 0, 10.0], 4))
    # platoon benchmark headway/engine parameters via the resolved echo
    assert cfg.resolved["plant"]["headway"] == 0.7
    assert cfg.resolved["plant"]["engine_tau"] == 0.1


def test_non_integer_switch_interval_rejected():
    raw = bundled_raw()
    raw["timing"]["switch_interval_seconds"] = 0.005
    with pytest.raises(ConfigError, match="switch_interval"):
        resolve_config(raw)


def test_unknown_keys_rejected_with_field_path():
    raw = bundled_raw()
    raw["frobnicate"] = 1
    with pytest.raises(ConfigError, match="config.*frobnicate"):
        resolve_config(raw)
    raw = bundled_raw()
    raw["observer"]["typo_key"] = 1
    with pytest.raises(ConfigError, match="observer.*typo_key"):
        resolve_config(raw)


def test_shape_matrix_default_identity_recorded_in_echo(tmp_path):
    raw = bundled_raw()
    del raw["observer"]["shape_matrix"]
    cfg = resolve_config(raw)
    assert np.array_equal(cfg.shape_matrix, np.eye(12))
    out = tmp_path / "echo.yaml"
    echo_config(cfg, out)
    echoed = yaml.safe_load(out.read_text())
    assert echoed["observer"]["shape_matrix"] == 1.0


def test_shape_matrix_must_be_agent_block_diagonal():
    raw = bundled_raw()
    full = np.eye(12)
    full[0, 11] = full[11, 0] = 0.1  # couples car 1 with car 4
    raw["observer"]["shape_matrix"] = full.tolist()
    with pytest.raises(ConfigError, match="block-diagonal"):
        resolve_config(raw)


def test_estimate_and_error_are_mutually_exclusive():
    raw = bundled_raw()
    raw["initial"]["estimate"] = raw["initial"]["state"]
    with pytest.raises(ConfigError, match="estimate"):
        resolve_config(raw)


def test_explicit_continuous_plant_is_discretized():
    raw = decoupled_raw(n_agents=2)
    raw["plant"]["time_domain"] = "continuous"
    raw["plant"]["a"] = [[-1.0, 0.0], [0.0, -2.0]]
    cfg = resolve_config(raw)
    assert cfg.plant.A[0, 0] == pytest.approx(np.exp(-0.5), abs=1e-12)
    assert cfg.plant.A[1, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_weight_must_be_spd():
    raw = bundled_raw()
    raw["weights"]["q_x"] = (-np.eye(12)).tolist()
    with pytest.raises(ConfigError):
        resolve_config(raw)


def test_kappa_below_dt_rejected():
    raw = bundled_raw()
    raw["supervisor"]["kappa_seconds"] = 0.001
    with pytest.raises(ConfigError, match="kappa"):
        resolve_config(raw)


# ---------------------------------------------------------------------------
# synthesize_all
# ---------------------------------------------------------------------------

def test_all_platoon_topologies_processed(platoon_store):
    assert sorted(platoon_store.records) == list(range(8))
    assert sorted(platoon_store.certified()) == list(range(8))


def test_single_agent_degenerate_network():
    raw = {
        "plant": {"type": "explicit", "a": [[0.9]], "b": [[1.0]],
                  "c": [[1.0]], "agent_dims": [[1, 1, 1]]},
        "links": [],
        "timing": {"dt": 1.0, "switch_interval_seconds": 2.0,
                   "horizon_seconds": 10.0},
        "initial": {"state": [1.0]},
    }
    cfg = resolve_config(raw)
    store = synthesize_all(cfg)
    assert list(store.records) == [0]
    assert store.records[0].feasible
    trace = run(cfg, store)
    assert metrics(trace).comm_cost == 0.0


def test_unstabilizable_plant_fails_before_any_sdp():
    raw = {
        "plant": {"type": "explicit", "a": [[1.2]], "b": [[0.0]],
                  "c": [[1.0]], "agent_dims": [[1, 1, 1]]},
        "links": [],
        "timing": {"dt": 1.0, "switch_interval_seconds": 1.0,
                   "horizon_seconds": 5.0},
    }
    with pytest.raises(FatalSynthesisError, match="unstabilizable"):
        synthesize_all(resolve_config(raw))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def test_equilibrium_run_on_decoupled_plant(decoupled_setup):
    # zero state, zero error: trajectory identically zero and the empty
    # topology wins every switch (communication never pays)
    config, store = decoupled_setup
    trace = run(config, store)
    assert np.all(trace.x == 0.0)
    assert np.all(trace.u == 0.0)
    assert np.all(trace.stage_cost == 0.0)
    assert np.all(trace.topology_index == 0)
    assert all(d.chosen == 0 for d in trace.switches)
    m = metrics(trace)
    assert m.J_x == m.J_e == m.J_total == m.comm_cost == 0.0


def test_platoon_empty_topology_wins_at_step_zero(platoon_config, platoon_store):
    # zero state and zero estimation error: all k=0 radii and worst cases are
    # zero, so the scores reduce to the communication charge and the empty
    # topology wins the first decision
    import dataclasses
    zero = np.zeros_like(platoon_config.x0)
    cfg = dataclasses.replace(platoon_config, x0=zero, x_hat0=zero.copy())
    trace = run(cfg, platoon_store)
    first = trace.switches[0]
    assert first.chosen == 0
    assert first.scores[0] == 0.0
    assert first.scores[7] == pytest.approx(
        platoon_config.kappa_steps * platoon_config.link_cost * 3, rel=1e-12)


def test_forced_runs_pin_the_topology(forced_traces):
    for idx, trace in forced_traces.items():
        assert np.all(trace.topology_index == idx)
        assert trace.switches == []


def test_full_communication_only_at_switch_instants(benchmark_trace):
    expected = benchmark_trace.k % benchmark_trace.switch_steps == 0
    assert np.array_equal(benchmark_trace.full_comm, expected)
    assert {d.k for d in benchmark_trace.switches} == set(
        benchmark_trace.k[expected])


def test_stage_cost_recomputable_from_record(platoon_config, benchmark_trace):
    xi_cost = (np.einsum("ij,jk,ik->i", benchmark_trace.x, platoon_config.q_x,
                         benchmark_trace.x)
               + np.einsum("ij,jk,ik->i", benchmark_trace.u, platoon_config.r,
                           benchmark_trace.u)
               + np.einsum("ij,jk,ik->i", benchmark_trace.e, platoon_config.q_e,
                           benchmark_trace.e))
    assert np.abs(xi_cost - benchmark_trace.stage_cost).max() <= \
        1e-12 * max(1.0, xi_cost.max())


def test_metric_consistency(benchmark_trace):
    m = metrics(benchmark_trace)
    total = float(np.sum(benchmark_trace.stage_cost)) + m.comm_cost
    assert m.J_total == pytest.approx(total, rel=1e-9)


def test_overflow_aborts_with_truncated_trace(platoon_config, platoon_store):
    store = copy.deepcopy(platoon_store)
    rec = store.records[7]
    huge = rec.controller
    object.__setattr__(huge, "K_x", huge.K_x * 1e155)
    with pytest.raises(NumericalAbortError) as err:
        run(platoon_config, store, forced_topology=7)
    trace = err.value.trace
    assert trace.aborted
    assert 0 < trace.n_steps < platoon_config.horizon_steps
    assert np.all(np.isfinite(trace.x))


# ---------------------------------------------------------------------------
# trace export / reload
# ---------------------------------------------------------------------------

def test_csv_layout_and_row_count(tmp_path, platoon_config, platoon_store):
    import dataclasses
    cfg = dataclasses.replace(platoon_config, horizon_steps=3)
    trace = run(cfg, platoon_store, forced_topology=7)
    export_trace(trace, tmp_path)
    lines = (tmp_path / "steps.csv").read_text().strip().splitlines()
    assert lines[0] == ",".join(steps_header(12, 4))
    assert len(lines) == 4  # header + 3 data rows


def test_csv_round_trip_reproduces_cost(tmp_path, platoon_config,
                                        benchmark_trace):
    export_trace(benchmark_trace, tmp_path)
    data = load_steps(tmp_path / "steps.csv")
    j_x = float(np.einsum("ij,jk,ik->", data["x"], platoon_config.q_x,
                          data["x"])
                + np.einsum("ij,jk,ik->", data["u"], platoon_config.r,
                            data["u"]))
    assert j_x == pytest.approx(metrics(benchmark_trace).J_x, rel=1e-9)
    assert np.array_equal(data["x"], benchmark_trace.x)  # repr round-trip


def test_switch_csv_has_blank_cells_for_decertified(tmp_path, platoon_config,
                                                    platoon_store):
    store = copy.deepcopy(platoon_store)
    store.records[2].feasible = True  # keep
    store.records[1].feasible = False
    store.records[1].reason = "dropped for the test"
    trace = run(platoon_config, store)
    export_trace(trace, tmp_path)
    lines = (tmp_path / "switches.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header == ["k"] + [f"r_{j}" for j in range(8)] \
        + ["chosen_index", "rho_bar_chosen"]
    first = lines[1].split(",")
    assert first[header.index("r_1")] == ""
    assert first[header.index("r_7")] != ""


def test_run_determinism_bit_identical_csvs(tmp_path, platoon_config,
                                            platoon_store):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    export_trace(run(platoon_config, platoon_store), d1)
    export_trace(run(platoon_config, platoon_store), d2)
    assert (d1 / "steps.csv").read_bytes() == (d2 / "steps.csv").read_bytes()
    assert (d1 / "switches.csv").read_bytes() == (d2 / "switches.csv").read_bytes()


# ---------------------------------------------------------------------------
# gain store
# ---------------------------------------------------------------------------

def test_store_round_trip_is_exact(tmp_path, platoon_store):
    path = tmp_path / "gains.json"
    save_gains(platoon_store, path)
    loaded = load_gains(path)
    assert loaded.link_universe == platoon_store.link_universe
    for idx, rec in platoon_store.records.items():
        other = loaded.records[idx]
        assert other.feasible == rec.feasible
        assert np.array_equal(other.controller.K_x, rec.controller.K_x)
        assert np.array_equal(other.observer.L, rec.observer.L)
        assert other.observer.beta == rec.observer.beta
        assert other.observer.sigma == rec.observer.sigma
        assert np.array_equal(other.certificate.P, rec.certificate.P)
        assert other.certificate.margin == rec.certificate.margin


def test_store_masks_serialized(tmp_path, platoon_store):
    path = tmp_path / "gains.json"
    save_gains(platoon_store, path)
    doc = json.loads(path.read_text())
    assert doc["format"] == "coalctrl-gains/v1"
    entry = next(e for e in doc["topologies"] if e["index"] == 5)
    gain_mask = np.array(entry["masks"]["gain"], dtype=bool)
    k_full = np.hstack([np.array(entry["controller"]["K_x"]),
                        np.array(entry["controller"]["K_u"])])
    assert np.all(k_full[~gain_mask] == 0.0)


def test_store_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "something-else/v9"}))
    with pytest.raises(StoreError, match="format"):
        load_gains(path)


def test_store_mismatch_detected(platoon_config, decoupled_setup):
    _, store = decoupled_setup
    with pytest.raises(ValueError, match="universe|dimensions"):
        run(platoon_config, store)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_cfg_path(tmp_path_factory):
    raw = decoupled_raw(n_agents=2)
    path = tmp_path_factory.mktemp("cli") / "small.cfg"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_cli_synth_run_compare_plot(tmp_path, small_cfg_path, capsys):
    gains = tmp_path / "gains.json"
    assert main(["synth", "--config", str(small_cfg_path),
                 "--out", str(gains)]) == 0
    assert gains.exists()
    assert (tmp_path / "resolved_config.yaml").exists()

    out = tmp_path / "run"
    assert main(["run", "--config", str(small_cfg_path), "--gains", str(gains),
                 "--out", str(out), "--no-plots"]) == 0
    assert (out / "steps.csv").exists()
    assert (out / "switches.csv").exists()
    assert (out / "summary.json").exists()
    assert (out / "resolved_config.yaml").exists()

    forced = tmp_path / "forced"
    assert main(["run", "--config", str(small_cfg_path), "--gains", str(gains),
                 "--out", str(forced), "--topology", "1", "--no-plots"]) == 0
    steps = load_steps(forced / "steps.csv")
    assert np.all(steps["topology_index"] == 1)

    cmp_dir = tmp_path / "cmp"
    assert main(["compare", "--config", str(small_cfg_path), "--gains",
                 str(gains), "--out", str(cmp_dir), "--no-plots"]) == 0
    table = capsys.readouterr().out
    assert "coalitional" in table and "forced_full" in table \
        and "forced_empty" in table

    assert main(["plot", "--out", str(out)]) == 0
    assert (out / "topology_sequence.png").exists()


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("plant: {type: platoon, n_cars: 4}\n"
                   "timing: {dt: 0.01, switch_interval_seconds: 0.005, "
                   "horizon_seconds: 1.0}\n")
    assert main(["synth", "--config", str(bad), "--out",
                 str(tmp_path / "g.json")]) == 2


def test_cli_missing_config_exit_code(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "g.json")]) == 2


def test_cli_fatal_synthesis_exit_code(tmp_path):
    raw = {
        "plant": {"type": "explicit", "a": [[1.2]], "b": [[0.0]],
                  "c": [[1.0]], "agent_dims": [[1, 1, 1]]},
        "links": [],
        "timing": {"dt": 1.0, "switch_interval_seconds": 1.0,
                   "horizon_seconds": 5.0},
    }
    path = tmp_path / "fatal.cfg"
    path.write_text(yaml.safe_dump(raw))
    assert main(["synth", "--config", str(path),
                 "--out", str(tmp_path / "g.json")]) == 3


def test_cli_runtime_abort_exit_code(tmp_path):
    raw = decoupled_raw(n_agents=2)
    raw["initial"]["state"] = [1.0, -1.0]
    cfg_path = tmp_path / "nonzero.cfg"
    cfg_path.write_text(yaml.safe_dump(raw))
    small_cfg_path = cfg_path
    gains = tmp_path / "gains.json"
    main(["synth", "--config", str(small_cfg_path), "--out", str(gains)])
    doc = json.loads(gains.read_text())
    for entry in doc["topologies"]:
        if entry["feasible"]:
            entry["controller"]["K_x"] = \
                (np.array(entry["controller"]["K_x"]) * 1e160).tolist()
    gains.write_text(json.dumps(doc))
    out = tmp_path / "blowup"
    code = main(["run", "--config", str(small_cfg_path), "--gains", str(gains),
                 "--out", str(out), "--no-plots"])
    assert code == 4
    assert (out / "steps.csv").exists()  # last valid steps recorded
