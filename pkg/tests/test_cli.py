import json
import subprocess
import sys

import numpy as np
import pytest

from ionnet import cli

FAST_CONFIG = {
    "jitter": {"k_max": 0, "span_factor": 3.0},
    "integration": {"target_dt_ns": 1.0},
    "t_sweep_us": {"start": 0.25, "stop": 1.0, "step": 0.25},
    "simulate": {"n_attempts": 400_000},
}


@pytest.fixture(scope="module")
def fast_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.json"
    path.write_text(json.dumps(FAST_CONFIG))
    return str(path)


def run_cli(args):
    return cli.run_command(list(args))


class TestConfig:
    def test_defaults_load(self):
        cfg = cli.load_config(None)
        assert cfg.node_a.gamma_clj > 0
        assert cfg.node_b.gamma_clj == 0
        assert cfg.t_sweep[0] == pytest.approx(0.25e-6)

    def test_seed_override(self, fast_config_path):
        cfg = cli.load_config(fast_config_path, seed_override=99)
        assert cfg.seed == 99

    def test_digest_stable(self, fast_config_path):
        d1 = cli.load_config(fast_config_path).digest
        d2 = cli.load_config(fast_config_path).digest
        assert d1 == d2

    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(cli.ConfigError):
            cli.load_config(str(bad))

    def test_bad_node_section(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"node_a": {"Omega1": 1.0}}))
        with pytest.raises(cli.ConfigError):
            cli.load_config(str(bad))


class TestExitCodes:
    def test_unknown_flag(self):
        proc = subprocess.run(
            [sys.executable, "-m", "ionnet.cli", "--bogus", "envelope"],
            capture_output=True, text=True)
        assert proc.returncode == 2

    def test_malformed_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        code = run_cli(["--config", str(bad), "envelope", "--node", "b"])
        assert code == cli.EXIT_CONFIG

    def test_missing_preset(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"node_a": {"preset": "nodeZ"}}))
        code = run_cli(["--config", str(cfg), "envelope", "--node", "b"])
        assert code == cli.EXIT_PRESET

    def test_tomography_requires_input(self, tmp_path):
        code = run_cli(["--out", str(tmp_path), "tomography"])
        assert code == cli.EXIT_CONFIG


class TestArtifacts:
    def test_envelope_headers_and_columns(self, fast_config_path, tmp_path):
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "--seed", "5", "envelope", "--node", "b"])
        assert code == 0
        lines = (tmp_path / "envelope_nodeB.csv").read_text().splitlines()
        assert lines[0].startswith("# config_sha256=")
        assert lines[1] == "# seed=5"
        assert lines[2] == "t_us,p_v,p_h,P_s"

    def test_simulate_deterministic(self, fast_config_path, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            code = run_cli(["--config", fast_config_path, "--out", str(out),
                            "--seed", "7", "simulate"])
            assert code == 0
        assert (out1 / "clicks.csv").read_bytes() == \
            (out2 / "clicks.csv").read_bytes()

    def test_simulate_then_analyze(self, fast_config_path, tmp_path):
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "--seed", "3", "simulate"])
        assert code == 0
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "analyze", "--clicks", str(tmp_path / "clicks.csv")])
        assert code == 0
        hist = [ln for ln in
                (tmp_path / "hom_histogram.csv").read_text().splitlines()
                if ln and not ln.startswith("#")]
        assert hist[0] == "tau_us,n_parallel_raw,n_perp_raw,n_parallel,n_perp"
        assert hist[1].count(",") == 4
        vis = [ln for ln in
               (tmp_path / "visibility_data.csv").read_text().splitlines()
               if ln and not ln.startswith("#")]
        assert vis[0] == "T_us,T_effective_us,V"
        assert vis[1].startswith("0.250,")

    def test_visibility_mode_ordering(self, fast_config_path, tmp_path):
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "visibility"])
        assert code == 0
        rows = [line.split(",") for line in
                (tmp_path / "visibility.csv").read_text().splitlines()
                if line and not line.startswith("#")][1:]
        for row in rows:
            v_full, v_notech, v_pure = map(float, row[1:])
            assert v_pure >= v_notech - 1e-9
            assert v_notech >= v_full - 1e-9

    def test_fidelity_model_bands(self, fast_config_path, tmp_path):
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "fidelity-model"])
        assert code == 0
        rows = [line.split(",") for line in
                (tmp_path / "fidelity_model.csv").read_text().splitlines()
                if line and not line.startswith("#")][1:]
        t_us = [float(r[0]) for r in rows]
        f_plus = [float(r[1]) for r in rows]
        idx = t_us.index(1.0)
        assert 0.772 <= f_plus[idx] <= 0.955

    def test_fidelity_model_from_visibility_csv(self, fast_config_path,
                                                tmp_path):
        vis_path = tmp_path / "vin.csv"
        vis_path.write_text("T_us,V\n1.000,0.930\n")
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "fidelity-model", "--visibility-csv", str(vis_path)])
        assert code == 0
        rows = [line for line in
                (tmp_path / "fidelity_model.csv").read_text().splitlines()
                if line and not line.startswith("#")]
        assert len(rows) == 2  # header plus the single provided window

    def test_tomography_synthetic(self, fast_config_path, tmp_path):
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "--seed", "11", "tomography", "--synthetic", "2000",
                        "--resamples", "10", "--optimize-phase"])
        assert code == 0
        doc = json.loads((tmp_path / "tomography.json").read_text())
        assert "rho_real" in doc and "fidelity" in doc
        assert doc["fidelity"]["n_resamples"] == 10
        assert 0.5 < doc["fidelity"]["value"] <= 1.0

    def test_tomography_counts_file(self, fast_config_path, tmp_path):
        from ionnet import empirical, tomography
        psi = empirical.bell_state(+1, 0.4)
        counts = tomography.exact_counts(np.outer(psi, psi.conj()), 10_000)
        counts_path = tmp_path / "counts.json"
        counts_path.write_text(json.dumps(tomography.counts_to_json(counts)))
        code = run_cli(["--config", fast_config_path, "--out", str(tmp_path),
                        "tomography", "--counts", str(counts_path),
                        "--resamples", "5", "--optimize-phase"])
        assert code == 0
        doc = json.loads((tmp_path / "tomography.json").read_text())
        assert doc["fidelity"]["value"] > 0.99
