import json

import pytest

from riscf.cli import main
from riscf.scenario import SystemConfig, dump_config

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def test_validate_defaults(capsys):
    assert main(["validate"]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_validate_reports_violations(capsys):
    assert main(["validate", "--override", "rejection_ratio=1.5"]) == 1
    assert "rejection_ratio out of (0,1)" in capsys.readouterr().out


def test_validate_config_file(tmp_path):
    path = tmp_path / "table1.ini"
    path.write_text(dump_config(SystemConfig()))
    assert main(["validate", "--config", str(path)]) == 0


def test_run_rejects_antenna_overload(tmp_path, capsys):
    code = main(["run", "--override", "num_ues=20", "--override", "ue_antennas=2",
                 "--out", str(tmp_path)])
    assert code == 1
    assert "K·N_r > B·N_t" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_override_key(tmp_path):
    assert main(["run", "--override", "nope=1", "--out", str(tmp_path)]) == 1


def test_unknown_scheme_is_usage_error(tmp_path):
    assert main(["cdf", "--schemes", "magic", "--drops", "1", "--out", str(tmp_path)]) == 1


def test_run_json_is_reproducible(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--seed", "5", "--out", str(out), "--name", "a.json"]) == 0
    assert main(["run", "--seed", "5", "--out", str(out), "--name", "b.json"]) == 0
    a, b = (out / "a.json").read_bytes(), (out / "b.json").read_bytes()
    assert a == b
    doc = json.loads(a)
    assert doc["config"]["num_aps"] == 4 and doc["config"]["rng_seed"] == 5
    assert doc["provenance"].startswith("riscf ")
    res = doc["result"]
    assert res["scheme"] == "proposed"
    assert res["wsr"] == pytest.approx(sum(res["per_ue_rates"]))


def test_sweep_rows_and_header(tmp_path):
    args = ["sweep", "--axis", "power_dbm", "--grid", "12:3:27", "--schemes",
            "proposed,without_ris", "--drops", "1", "--jobs", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    text = (tmp_path / "sweep.csv").read_text()
    lines = text.splitlines()
    assert lines[0].startswith("# riscf ")
    assert "# max_power_dbm = 23.0" in lines
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "sweep_value,scheme,mean_wsr,stderr,n"
    assert len(body) - 1 == 6 * 2
    assert main(args + ["--name", "again.csv"]) == 0
    assert (tmp_path / "again.csv").read_bytes() == text.encode()


def test_cdf_csv(tmp_path):
    assert main(["cdf", "--schemes", "proposed", "--drops", "3", "--jobs", "1",
                 "--out", str(tmp_path)]) == 0
    body = [l for l in (tmp_path / "cdf.csv").read_text().splitlines() if not l.startswith("#")]
    assert body[0] == "scheme,wsr,cdf"
    assert [float(l.split(",")[2]) for l in body[1:]] == pytest.approx([1 / 3, 2 / 3, 1.0])


def test_dump_channels_uses_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("RISCF_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["dump-channels", "--override", "ris_elements=4"]) == 0
    doc = json.loads((tmp_path / "env" / "channels.json").read_text())
    assert doc["format"] == "riscf-channels/1"
    assert doc["arrays"]["ris_ue"]["shape"] == [4, 6, 2, 4]


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import riscf.cli as cli

    def boom(*a, **k):
        raise FloatingPointError("diverged")
    monkeypatch.setattr(cli, "run_drop", boom)
    assert main(["run", "--out", str(tmp_path)]) == 2
