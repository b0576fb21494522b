import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passlab import cli
from passlab.config import (
    ConfigError,
    ScenarioConfig,
    bundled_scenario,
    config_hash,
    dump_config,
    load_config,
    parse_config,
)
from passlab.experiments import (
    dataset_records,
    evaluate_dataset,
    outage_study,
    reevaluate,
    simulate,
    split_counts,
    sweep,
    train_on_dataset,
)
from passlab.predictor import params_to_json

SMALL = {
    "name": "small",
    "geometry": {"pas_per_waveguide": 8},
    "users": {"count": 1},
    "run": {"trials": 3, "dataset_count": 10},
    "predictor": {"epochs": 50, "hidden": 16, "batch_size": 8},
    "outage": {"trials": 4000, "densities": [0.0, 0.05, 0.5]},
    "sweep": {"users_per_point": 3, "L": [4, 8], "grid_resolution": [16, 64],
              "snr": [0.0, 20.0], "sinr_min": [10.0], "power": [10.0, 20.0, 30.0]},
}


def small(**sections):
    return ScenarioConfig.model_validate(SMALL).with_updates(**sections)


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def body(path):
    """CSV content without the manifest footer."""
    return b"".join(line for line in path.read_bytes().splitlines(True) if not line.startswith(b"#"))


class TestConfig:
    def test_defaults_match_bundled(self):
        cfg = bundled_scenario()
        assert cfg.geometry.num_waveguides == 4 and cfg.geometry.pas_per_waveguide == 16
        assert cfg.users.count == 8
        assert cfg.power_config().p_max == pytest.approx(0.1)

    def test_round_trip(self):
        cfg = small()
        assert parse_config(dump_config(cfg)) == cfg

    def test_hash_ignores_key_order(self):
        reordered = dict(reversed(list(SMALL.items())))
        assert config_hash(parse_config(json.dumps(reordered))) == config_hash(small())

    def test_hash_sees_values(self):
        assert config_hash(small()) != config_hash(small(run={"trials": 4}))

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="geometry.colour"):
            parse_config('{"geometry": {"colour": 1}}')

    def test_bad_json_reports_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config('{\n  "name": ,\n}')

    def test_cross_checks(self):
        with pytest.raises(ConfigError):
            parse_config('{"tokens": {"patch_len": 20}}')
        with pytest.raises(ConfigError):
            parse_config('{"users": {"count": 2}, "power": {"allocation": [1.0]}}')

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-20, 40), st.floats(-120, -60))
    def test_dbm_converted_once(self, p, n):
        pw = small(power={"p_max_dbm": p, "noise_dbm": n}).power_config()
        assert pw.p_max == pytest.approx(10 ** ((p - 30) / 10))
        assert pw.noise_power == pytest.approx(10 ** ((n - 30) / 10))


class TestExperiments:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5000))
    def test_split_counts(self, n):
        a, b, c = split_counts(n)
        assert a + b + c == n and a == int(0.7 * n) and b == int(0.1 * n)

    def test_split_of_ten(self):
        recs = list(dataset_records(small(), 7, 10))
        assert [r["split"] for r in recs].count("train") == 7
        assert [r["split"] for r in recs].count("val") == 1
        assert [r["split"] for r in recs].count("test") == 2

    def test_reevaluation_matches_stored(self):
        cfg = small(users={"count": 2})
        for rec in dataset_records(cfg, 3, 4):
            assert reevaluate(cfg, rec) == pytest.approx(rec["objective"], rel=1e-9, abs=1e-12)

    def test_simulate_row_count_default_users(self):
        cfg = small(users={"count": 8}, run={"trials": 2})
        rows = simulate(cfg, 1, "oracle")
        assert len(rows) == 16 and {r["user"] for r in rows} == set(range(1, 9))

    def test_simulate_single_user_is_codebook_optimum(self):
        rows = simulate(small(), 5, "oracle")
        assert all(r["rate"] == r["sum_rate"] for r in rows)

    def test_random_mode_not_better_than_oracle(self):
        cfg = small()
        best = [r["rate"] for r in simulate(cfg, 2, "oracle")]
        rnd = [r["rate"] for r in simulate(cfg, 2, "random")]
        assert all(r <= b + 1e-12 for r, b in zip(rnd, best))

    def test_trained_mode_needs_params(self):
        with pytest.raises(ValueError):
            simulate(small(), 0, "trained")

    def test_eval_oracle_is_perfect(self):
        cfg = small()
        table = evaluate_dataset(cfg, list(dataset_records(cfg, 4, 10)), "oracle", 0)
        assert table["top1"] == 1.0 and table["sum_rate_ratio"] == pytest.approx(1.0)

    def test_training_loss_drops(self):
        cfg = small(run={"dataset_count": 60})
        recs = list(dataset_records(cfg, 8, 60))
        hist = train_on_dataset(cfg, recs, 0).history
        assert hist[-1][3] < hist[0][3]

    def test_outage_rows(self):
        rows = outage_study(small(), 0)
        assert len(rows) == 3
        assert rows[0].closed_form == 0.0 and rows[0].mc_estimate == 0.0
        assert all(r.ordering == "strict" for r in rows[1:])

    def test_outage_degenerate_is_equal(self):
        rows = outage_study(small(outage={"degenerate": True}), 0)
        assert all(r.ordering == "equal" for r in rows)

    def test_power_sweep_non_decreasing(self):
        rows = sweep(small(), "power", 0).rows
        oracle = [r["mean"] for r in rows if r["variant"] == "oracle-PASS"]
        assert all(b >= a - 1e-12 for a, b in zip(oracle, oracle[1:]))

    def test_unknown_axis(self):
        with pytest.raises(ValueError):
            sweep(small(), "bandwidth", 0)


class TestCommandLine:
    def test_usage_errors(self, cfg_file, tmp_path):
        for argv in (["simulate"], ["launch", "--config", cfg_file, "--out", tmp_path],
                     ["simulate", "--config", cfg_file, "--out", tmp_path, "--seed", "-1"],
                     ["simulate", "--config", cfg_file, "--out", tmp_path, "--mode", "greedy"]):
            with pytest.raises(SystemExit) as exc:
                run(*argv)
            assert exc.value.code == cli.EXIT_USAGE

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"run": {"trials": 2, "turbo": true}}')
        assert run("simulate", "--config", bad, "--out", tmp_path / "o") == cli.EXIT_CONFIG
        assert "run.turbo" in capsys.readouterr().err
        bad.write_text('{\n"run": {\n"trials": 2,\n}}')
        assert run("simulate", "--config", bad, "--out", tmp_path / "o") == cli.EXIT_CONFIG
        assert "line 4" in capsys.readouterr().err

    def test_trained_without_params_is_runtime_error(self, cfg_file, tmp_path):
        status = run("simulate", "--config", cfg_file, "--out", tmp_path, "--mode", "trained")
        assert status == cli.EXIT_RUNTIME

    def test_simulate_outputs(self, cfg_file, tmp_path):
        assert run("simulate", "--config", cfg_file, "--out", tmp_path, "--seed", 11) == 0
        lines = (tmp_path / "simulate.csv").read_bytes().split(b"\r\n")
        assert lines[0] == b"trial,user,codeword,sinr,rate,sum_rate"
        footer = lines[-2].decode()
        assert footer.startswith("# manifest=manifest_simulate.json") and footer.endswith("seed=11")
        manifest = json.loads((tmp_path / "manifest_simulate.json").read_text())
        assert manifest["config_sha256"] == config_hash(load_config(cfg_file))
        assert manifest["outputs"] == ["simulate.csv"]

    @pytest.mark.parametrize("command", ["simulate", "outage"])
    def test_byte_identical_reruns(self, cfg_file, tmp_path, command):
        name = f"{command}.csv"
        assert run(command, "--config", cfg_file, "--out", tmp_path / "a", "--seed", 3) == 0
        assert run(command, "--config", cfg_file, "--out", tmp_path / "b", "--seed", 3) == 0
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_output(self, cfg_file, tmp_path):
        run("simulate", "--config", cfg_file, "--out", tmp_path / "a", "--seed", 1)
        run("simulate", "--config", cfg_file, "--out", tmp_path / "b", "--seed", 2)
        assert body(tmp_path / "a" / "simulate.csv") != body(tmp_path / "b" / "simulate.csv")

    def test_dataset_train_eval_pipeline(self, cfg_file, tmp_path):
        out = tmp_path / "run"
        assert run("dataset", "--config", cfg_file, "--out", out, "--count", 30) == 0
        first = hashlib.sha256((out / "dataset.jsonl").read_bytes()).hexdigest()
        assert run("dataset", "--config", cfg_file, "--out", out, "--count", 30) == 0
        assert hashlib.sha256((out / "dataset.jsonl").read_bytes()).hexdigest() == first

        assert run("train", "--config", cfg_file, "--out", out) == 0
        assert (out / "params.json").exists()
        header = (out / "loss.csv").read_text().splitlines()[0]
        assert header == "epoch,loss_1,theta_1,total"

        assert run("eval", "--config", cfg_file, "--out", out) == 0
        assert run("eval", "--config", cfg_file, "--out", out, "--mode", "random") == 0
        rows = (out / "eval.csv").read_text().splitlines()
        assert rows[0] == "mode,metric,value" and rows[1].startswith("random,top1,")

    def test_params_for_wrong_scenario(self, cfg_file, tmp_path):
        cfg = small(run={"dataset_count": 20})
        recs = list(dataset_records(cfg, 0, 20))
        params = train_on_dataset(cfg.with_updates(predictor={"epochs": 1}), recs, 0).params
        (tmp_path / "params.json").write_text(params_to_json(params))
        other = tmp_path / "other.json"
        other.write_text(json.dumps({**SMALL, "users": {"count": 2}}))
        assert run("simulate", "--config", other, "--out", tmp_path, "--mode", "trained") == cli.EXIT_RUNTIME

    def test_outage_command(self, cfg_file, tmp_path, capsys):
        assert run("outage", "--config", cfg_file, "--out", tmp_path) == 0
        assert "ordering: PASS" in capsys.readouterr().out
        rows = (tmp_path / "outage.csv").read_text().splitlines()
        assert rows[0].split(",")[0] == "phi" and len(rows) == 5

    def test_outage_violation_exit_code(self, tmp_path):
        # a fixed antenna parked right above the users' line beats the waveguides
        doc = {**SMALL, "outage": {**SMALL["outage"], "conventional_position": [15.0, 6.0, 0.5]}}
        path = tmp_path / "v.json"
        path.write_text(json.dumps(doc))
        assert run("outage", "--config", path, "--out", tmp_path / "o") == cli.EXIT_PROPERTY

    def test_sweep_command(self, cfg_file, tmp_path):
        assert run("sweep", "--config", cfg_file, "--out", tmp_path, "--axis", "L", "--axis", "sinr-min") == 0
        assert (tmp_path / "sweep_L.csv").exists() and (tmp_path / "timing_sinr_min.csv").exists()
        L_rows = [r.split(",") for r in (tmp_path / "sweep_L.csv").read_text().splitlines()[1:-1]]
        assert {r[2] for r in L_rows} == {"oracle-PASS", "fixed-antenna"}
