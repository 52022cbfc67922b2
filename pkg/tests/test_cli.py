import csv
import json
import math

import numpy as np
import pytest

from cavityfeedback.cli import main
from cavityfeedback.config import (
    ExperimentConfig,
    apply_override,
    load_config,
    make_preset_target,
    save_config,
)
from cavityfeedback.errors import FormatError
from cavityfeedback.fock import FockSpace, mean_photon_ket
from cavityfeedback.measurement import subspace_index, verify_stabilizable
from cavityfeedback.policy import PolicyNet, save_policy


TINY_CONFIG = {
    "dim": 12,
    "target": {"preset": "two-comp:1,4"},
    "setup": {"delta_n": 3},
    "episode": {"max_cycles": 8},
    "controller": {"kind": "lyapunov", "alpha_max": 0.3},
    "run": {"n_traj": 4, "seed": 77, "workers": 1},
}


def write_config(tmp_path, data=None, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data if data is not None else TINY_CONFIG))
    return path


class TestPresets:
    @pytest.mark.parametrize(
        "spec,delta_n,support",
        [
            ("fock:1", None, {1}),
            ("two-comp:1,4", 3, {1, 4}),
            ("two-comp:0,4", 4, {0, 4}),
            ("binomial-0369", 3, {0, 3, 6, 9}),
            ("cat3", 3, None),
            ("cat4", 4, None),
        ],
    )
    def test_preset_construction(self, spec, delta_n, support, space30):
        ket, natural = make_preset_target(spec, space30)
        assert abs(ket.norm - 1.0) < 1e-12
        nz = set(np.flatnonzero(np.abs(ket.amplitudes) > 1e-12).tolist())
        if support is not None:
            assert nz == support
        if delta_n is not None:
            assert natural == delta_n

    def test_cat3_mean_photon_near_three(self, space30):
        ket, _ = make_preset_target("cat3", space30)
        assert abs(mean_photon_ket(ket) - 3.0) < 0.6

    def test_cat_states_live_in_one_subspace(self, space30):
        for spec, dn, m in (("cat3", 3, 0), ("cat4", 4, 1)):
            ket, _ = make_preset_target(spec, space30)
            nz = np.flatnonzero(np.abs(ket.amplitudes) > 1e-12)
            assert {subspace_index(int(n), dn) for n in nz} == {m}

    def test_presets_are_stabilizable(self, space30):
        cases = ["two-comp:1,4", "two-comp:0,4", "binomial-0369", "cat3", "cat4"]
        for spec in cases:
            cfg = ExperimentConfig(dim=30, target_preset=spec)
            ok, residuals = verify_stabilizable(cfg.build_target(), cfg.build_setup())
            assert ok, (spec, residuals)

    def test_unknown_preset(self, space30):
        with pytest.raises(FormatError):
            make_preset_target("ghz:4", space30)


class TestConfigRoundTrip:
    def test_dict_round_trip_identity(self):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        once = cfg.to_dict()
        twice = ExperimentConfig.from_dict(once).to_dict()
        assert once == twice

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        path = tmp_path / "saved.json"
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg
        assert loaded.config_hash() == cfg.config_hash()

    def test_override_changes_hash(self):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        other = apply_override(cfg, "run.seed=123")
        assert other.seed == 123
        assert other.config_hash() != cfg.config_hash()

    def test_override_unknown_key(self):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        with pytest.raises(FormatError):
            apply_override(cfg, "run.bogus=1")

    def test_cross_subspace_target_rejected(self):
        cfg = ExperimentConfig(dim=12, target_preset="two-comp:0,1", delta_n=3)
        with pytest.raises(FormatError):
            cfg.build_episode_config()

    def test_m_target_resolution(self):
        cfg = ExperimentConfig.from_dict(TINY_CONFIG)
        assert cfg.resolved_m_target() == 1
        assert cfg.build_setup().phi_r == pytest.approx(4 * math.pi / 3 + math.pi / 2)


class TestCliCommands:
    def test_run_writes_artifacts(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        for name in (
            "summary.csv",
            "summary.json",
            "records.json",
            "final_fidelities.csv",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == load_config(cfg_path).config_hash()
        with open(out / "summary.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "cycle"
        assert len(rows) == 10  # header + cycles 0..8

    def test_run_byte_identical_across_workers(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out1, out2 = tmp_path / "w1", tmp_path / "w2"
        assert main(["run", "--config", str(cfg_path), "--out", str(out1), "--workers", "1"]) == 0
        assert main(["run", "--config", str(cfg_path), "--out", str(out2), "--workers", "2"]) == 0
        for name in ("summary.csv", "final_fidelities.csv", "records.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_invalid_delta_n_fails_cleanly(self, tmp_path, capsys):
        bad = dict(TINY_CONFIG, setup={"delta_n": 0})
        cfg_path = write_config(tmp_path, bad)
        code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "x")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_tree_command(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "tree"
        assert main(
            ["tree", "--config", str(cfg_path), "--out", str(out), "--depth", "3"]
        ) == 0
        blob = json.loads((out / "tree.json").read_text())
        assert blob["depth"] == 3
        assert abs(blob["leaf_probability_sum"] - 1.0) < 1e-8
        with open(out / "tree.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 8  # header + 2^3 leaves

    def test_tree_custom_initial(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "tree2"
        assert main(
            [
                "tree",
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--depth",
                "2",
                "--initial",
                "two-comp:0,3",
            ]
        ) == 0
        blob = json.loads((out / "tree.json").read_text())
        assert blob["rows"][0]["fidelities"][0] < 1e-12

    def test_sweep_command(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "sweep"
        assert main(
            [
                "sweep",
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--ratios",
                "0.0,1e-3",
                "--eps",
                "0.0,0.02",
                "--n-traj",
                "3",
            ]
        ) == 0
        grid = json.loads((out / "sweep.json").read_text())
        values = np.array(grid["max_median"])
        assert values.shape == (2, 2)
        assert ((values >= 0) & (values <= 1)).all()

    def test_calibrate_command(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "cal"
        assert main(
            [
                "calibrate-lyapunov",
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--alpha-grid",
                "0.2,0.3",
                "--n-traj",
                "4",
            ]
        ) == 0
        blob = json.loads((out / "calibration.json").read_text())
        assert blob["best_alpha_max"] in (0.2, 0.3)

    def test_eval_policy_command(self, tmp_path):
        rng = np.random.default_rng(0)
        widths = [144, 8, 8, 1]
        net = PolicyNet(
            weights=tuple(
                rng.standard_normal((o, i)) * 0.1 for i, o in zip(widths[:-1], widths[1:])
            ),
            biases=tuple(np.zeros(o) for o in widths[1:]),
            action_dim=1,
        )
        weights_path = tmp_path / "actor.cfpw"
        save_policy(net, weights_path)
        cfg_path = write_config(tmp_path)
        out = tmp_path / "eval"
        assert main(
            [
                "eval-policy",
                "--config",
                str(cfg_path),
                "--weights",
                str(weights_path),
                "--out",
                str(out),
                "--n-traj",
                "2",
            ]
        ) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "eval-policy"
