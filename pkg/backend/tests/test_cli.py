import pytest

from scfde.cli import main
from scfde.simulator import read_metrics_csv


@pytest.fixture
def workdir(tmp_path, monkeypatch, small_config_text):
    monkeypatch.chdir(tmp_path)
    for name in ("CONFIG", "OUT", "SEED", "JOBS", "FILTER", "LOG_LEVEL", "HOST", "PORT"):
        # setenv first so teardown also removes anything a .env file loaded
        monkeypatch.setenv(f"SCFDE_{name}", "")
        monkeypatch.delenv(f"SCFDE_{name}")
    (tmp_path / "exp.toml").write_text(small_config_text)
    return tmp_path


class TestSimulate:
    def test_writes_csv(self, workdir):
        assert main(["simulate", "--config", "exp.toml", "--out", "out.csv"]) == 0
        rows = read_metrics_csv(workdir / "out.csv")
        assert [float(r["relay_snr_db"]) for r in rows] == [8.0, 16.0]
        assert (workdir / "out.csv").read_text().startswith("# schema_version=1")

    def test_repeated_config(self, workdir):
        assert main(["simulate", "--config", "exp.toml", "--config", "exp.toml", "--out", "out.csv"]) == 0
        assert len(read_metrics_csv(workdir / "out.csv")) == 4

    def test_reruns_are_byte_identical(self, workdir):
        main(["simulate", "--config", "exp.toml", "--out", "a.csv"])
        main(["simulate", "--config", "exp.toml", "--out", "b.csv"])
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_environment_fills_missing_flags(self, workdir, monkeypatch):
        monkeypatch.setenv("SCFDE_CONFIG", "exp.toml")
        monkeypatch.setenv("SCFDE_OUT", "env.csv")
        assert main(["simulate"]) == 0
        assert (workdir / "env.csv").exists()

    def test_flag_wins_over_environment(self, workdir, monkeypatch):
        monkeypatch.setenv("SCFDE_OUT", "env.csv")
        monkeypatch.setenv("SCFDE_SEED", "5")
        assert main(["simulate", "--config", "exp.toml", "--out", "flag.csv", "--seed", "6"]) == 0
        assert (workdir / "flag.csv").exists()
        assert not (workdir / "env.csv").exists()
        assert '"seed": 6' in (workdir / "flag.csv").read_text()

    def test_dotenv_file(self, workdir):
        (workdir / ".env").write_text("SCFDE_CONFIG=exp.toml\nSCFDE_OUT=dotenv.csv\n")
        assert main(["simulate"]) == 0
        assert (workdir / "dotenv.csv").exists()

    def test_missing_config(self, workdir, capsys):
        assert main(["simulate", "--out", "out.csv"]) == 2
        assert "config_paths" in capsys.readouterr().err

    def test_unwritable_output(self, workdir):
        assert main(["simulate", "--config", "exp.toml", "--out", "no/such/dir/out.csv"]) == 2

    def test_bad_config(self, workdir, capsys):
        (workdir / "bad.toml").write_text("[system]\nantennas = 4\n")
        assert main(["simulate", "--config", "bad.toml", "--out", "out.csv"]) == 2
        assert "antennas" in capsys.readouterr().err

    def test_bad_seed_variable(self, workdir, monkeypatch):
        monkeypatch.setenv("SCFDE_SEED", "abc")
        assert main(["simulate", "--config", "exp.toml", "--out", "out.csv"]) == 2


class TestTrace:
    def test_writes_both_files(self, workdir):
        assert main(["trace", "--config", "exp.toml", "--out", "trace.csv"]) == 0
        assert (workdir / "trace.csv").read_text().startswith("relay_snr_db,trial,outer")
        assert (workdir / "trace_obj.csv").read_text().startswith("relay_snr_db,trial,obj_nfb_0")


class TestVerify:
    def test_passes(self, workdir, capsys):
        assert main(["verify", "--filter", "spectral", "--trials", "3"]) == 0
        out = capsys.readouterr().out
        assert "spectral" in out and "failed=0" in out

    def test_unknown_suite(self, workdir):
        assert main(["verify", "--filter", "nothing-here"]) == 2
