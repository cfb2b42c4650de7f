"""Configuration validation, the command-line harness, artifacts and summaries."""
import json
import subprocess
import sys

import pytest

from wickwave.cli import ENV_OUT, ENV_THREADS, EXIT_ERROR, EXIT_FAIL, EXIT_PASS, build_parser, main, resolve
from wickwave.config import (EXPERIMENTS, ConfigError, ExperimentConfig, default_config,
                             load_config)
from wickwave.dynamics import BlowupError, integrate_v
from wickwave.report import (MANIFEST, REPORT, MissingArtifactError, emit_summary, write_blowup)
from wickwave.snapshot import decode
from wickwave.torus import LatticeSpec, SpectralField


def _write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


FAST_WICK = {"experiment": "wick-orthogonality", "lattice": {"K": 4}, "physics": {"N": 4.0},
             "run": {"M": 2000}}
FAST_COMM = {"experiment": "commutator-scaling", "run": {"M": 2},
             "params": {"Ns": [8, 16], "ks": [2, 3], "latticeFactor": 2}}


class TestConfig:
    @pytest.mark.parametrize("name", EXPERIMENTS)
    def test_defaults_round_trip(self, name):
        cfg = default_config(name)
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg

    def test_positive_M(self):
        with pytest.raises(ConfigError, match="M must be positive") as info:
            ExperimentConfig.from_dict({"experiment": "variance-check", "run": {"M": 0}})
        assert info.value.field == "run.M"

    def test_global_run_needs_s_above_four_fifths(self):
        with pytest.raises(ConfigError, match="4/5"):
            ExperimentConfig.from_dict({"experiment": "global-imethod-run", "physics": {"s": 0.7}})

    def test_eps_bound(self):
        with pytest.raises(ConfigError, match="eps"):
            ExperimentConfig.from_dict({"experiment": "local-solve", "physics": {"eps": 0.3}})

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown field"):
            ExperimentConfig.from_dict({"experiment": "local-solve", "run": {"steps": 3}})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            default_config("nope")

    def test_missing_experiment(self):
        with pytest.raises(ConfigError, match="missing"):
            ExperimentConfig.from_dict({})

    def test_schedule_window(self):
        doc = {"experiment": "global-imethod-run", "physics": {"schedule": {"alpha": 0.2, "beta": 0.3}}}
        with pytest.raises(ConfigError, match="beta"):
            ExperimentConfig.from_dict(doc)

    def test_params_merge(self):
        cfg = ExperimentConfig.from_dict({"experiment": "commutator-scaling", "params": {"Ns": [8]}})
        assert cfg.params["Ns"] == [8]
        assert cfg.params["ks"] == [2, 3]

    def test_overrides(self):
        cfg = default_config("local-solve").with_overrides(seed=2 ** 64 - 1, out="x", fmt="json")
        assert cfg.run.seed == 2 ** 64 - 1
        assert cfg.output.dir == "x" and cfg.output.format == "json"

    def test_seed_range(self):
        with pytest.raises(ConfigError):
            default_config("local-solve").with_overrides(seed=2 ** 64)

    def test_load(self, tmp_path):
        cfg = load_config(_write_cfg(tmp_path, FAST_WICK))
        assert cfg.run.M == 2000 and cfg.lattice.K == 4


class TestResolve:
    def _args(self, *argv):
        return build_parser().parse_args(list(argv))

    def test_env_out_and_threads(self):
        cfg, threads = resolve(self._args("local-solve"), {ENV_OUT: "/tmp/a", ENV_THREADS: "3"})
        assert cfg.output.dir == "/tmp/a" and threads == 3

    def test_flags_beat_env(self):
        args = self._args("local-solve", "--out", "/tmp/b", "--threads", "2")
        cfg, threads = resolve(args, {ENV_OUT: "/tmp/a", ENV_THREADS: "3"})
        assert cfg.output.dir == "/tmp/b" and threads == 2

    def test_bad_env_threads(self):
        with pytest.raises(ConfigError):
            resolve(self._args("local-solve"), {ENV_THREADS: "many"})
        with pytest.raises(ConfigError):
            resolve(self._args("local-solve"), {ENV_THREADS: "0"})

    def test_hex_seed(self):
        cfg, _ = resolve(self._args("local-solve", "--seed", "0xff"), {})
        assert cfg.run.seed == 255

    def test_config_must_match_command(self, tmp_path):
        path = _write_cfg(tmp_path, FAST_WICK)
        with pytest.raises(ConfigError):
            resolve(self._args("local-solve", "--config", path), {})

    def test_rejects_negative_seed(self):
        with pytest.raises(SystemExit):
            self._args("local-solve", "--seed", "-1")

    def test_rejects_zero_threads(self):
        with pytest.raises(SystemExit):
            self._args("local-solve", "--threads", "0")


class TestExitCodes:
    def test_pass(self, tmp_path, capsys):
        code = main(["wick-orthogonality", "--config", _write_cfg(tmp_path, FAST_WICK),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_PASS
        assert "PASS wick-orthogonality" in capsys.readouterr().out

    def test_statistical_failure(self, tmp_path):
        code = main(["commutator-scaling", "--config", _write_cfg(tmp_path, FAST_COMM),
                     "--out", str(tmp_path / "run")])
        assert code == EXIT_FAIL

    def test_config_error(self, tmp_path, capsys):
        bad = _write_cfg(tmp_path, {"experiment": "variance-check", "run": {"M": 0}})
        assert main(["variance-check", "--config", bad]) == EXIT_ERROR
        assert "M must be positive" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["variance-check", "--config", str(tmp_path / "none.json")]) == EXIT_ERROR

    def test_print_config(self, capsys):
        assert main(["local-solve", "--print-config", "--seed", "7"]) == EXIT_PASS
        assert json.loads(capsys.readouterr().out)["run"]["seed"] == 7

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "wickwave", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for name in EXPERIMENTS:
            assert name in out.stdout


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = _write_cfg(root, FAST_WICK)
    assert main(["wick-orthogonality", "--config", cfg, "--out", str(root / "a")]) == EXIT_PASS
    assert main(["wick-orthogonality", "--config", cfg, "--out", str(root / "j"),
                 "--format", "json"]) == EXIT_PASS
    return root


class TestArtifacts:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = _write_cfg(tmp_path, FAST_WICK)
        out = tmp_path / "run"
        snaps = []
        for _ in range(2):
            assert main(["wick-orthogonality", "--config", cfg, "--out", str(out)]) == EXIT_PASS
            snaps.append({p.name: p.read_bytes() for p in out.iterdir()})
        assert snaps[0].keys() == snaps[1].keys()
        for name in snaps[0]:
            if name != MANIFEST:
                assert snaps[0][name] == snaps[1][name], name

    def test_manifest(self, runs):
        man = json.loads((runs / "a" / MANIFEST).read_text())
        assert man["config"]["run"]["M"] == 2000
        assert "codeVersion" in man and man["wallTimeSeconds"] >= 0
        assert set(man["files"]) >= {REPORT, "config.json", "wick_moments.csv"}

    def test_json_format(self, runs):
        recs = json.loads((runs / "j" / "wick_moments.json").read_text())
        assert isinstance(recs, list) and recs

    def test_seed_changes_output(self, runs, tmp_path):
        cfg = _write_cfg(tmp_path, FAST_WICK)
        main(["wick-orthogonality", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "99"])
        assert (tmp_path / "s" / "wick_moments.csv").read_bytes() != (runs / "a" / "wick_moments.csv").read_bytes()

    def test_summary(self, runs, capsys):
        assert main(["summary", str(runs / "a")]) == EXIT_PASS
        out = capsys.readouterr().out
        assert "| 4 | PASS |" in out
        assert "wick_moments" in out

    def test_summary_of_parent(self, runs):
        text = emit_summary([runs])
        assert text.count("## wick-orthogonality") == 2

    def test_summary_to_file(self, runs, tmp_path):
        target = tmp_path / "summary.md"
        assert main(["summary", str(runs / "a"), "--output", str(target)]) == EXIT_PASS
        assert target.read_text().startswith("# Experiment summary")

    def test_summary_empty_dir(self, tmp_path, capsys):
        with pytest.raises(MissingArtifactError):
            emit_summary([tmp_path])
        assert main(["summary", str(tmp_path)]) == EXIT_ERROR
        assert "missing" in capsys.readouterr().err

    def test_summary_missing_table(self, runs, tmp_path):
        import shutil
        d = tmp_path / "broken"
        shutil.copytree(runs / "a", d)
        (d / "wick_moments.csv").unlink()
        with pytest.raises(MissingArtifactError, match="wick_moments"):
            emit_summary([d])


class TestBlowup:
    def test_snapshot_written(self, tmp_path):
        lat = LatticeSpec(2)
        v0 = SpectralField.from_modes(lat, {(1, 0): 0.5})
        with pytest.raises(BlowupError) as info:
            integrate_v(v0, SpectralField.zeros(lat), 0.01, 3, False, ceiling=1e-3)
        files = write_blowup(info.value, default_config("local-solve"), tmp_path)
        got_lat, arrays = decode((tmp_path / files[0]).read_bytes())
        assert got_lat == lat
        assert arrays[0][3, 2] == pytest.approx(0.5)
        side = json.loads((tmp_path / files[1]).read_text())
        assert side["kind"] == "blowup-last-good" and side["norm"] > side["ceiling"]
