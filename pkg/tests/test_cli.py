import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from ergokit import parse_config
from ergokit.cli import main, run_experiment

GOLDEN = Path(__file__).parent / "golden"
EXPECTED = json.loads((GOLDEN / "expected.json").read_text())
EXPERIMENT_OF = {"orey_power_law": "orey-check", "drift_brownian": "drift-check",
                 "rank_e1": "rank-check", "rank_e1_off_axis": "rank-check",
                 "bad_key": "tv-decay", "orey_missing_levy": "orey-check"}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_golden_exit_status(name, tmp_path, capsys):
    out = tmp_path / "out"
    code = main([EXPERIMENT_OF[name], "--config", str(GOLDEN / f"{name}.yaml"), "--out", str(out)])
    exp = EXPECTED[name]
    assert code == exp["exit_code"]
    report = json.loads((out / "report.json").read_text())
    assert report["exit_code"] == code
    assert report["stage"] == exp["stage"]
    assert {k: v["passed"] for k, v in report["verdicts"].items()} == exp["verdicts"]
    if code == 1:
        assert report["error"]


def test_golden_rank_csv(tmp_path):
    main(["rank-check", "--config", str(GOLDEN / "rank_e1.yaml"), "--out", str(tmp_path)])
    assert (tmp_path / "rank_check.csv").read_bytes() == \
        (GOLDEN / "rank_e1.rank_check.csv").read_bytes()


def test_orey_report_ratios(tmp_path):
    main(["orey-check", "--config", str(GOLDEN / "orey_power_law.yaml"), "--out", str(tmp_path)])
    report = json.loads((tmp_path / "report.json").read_text())
    np.testing.assert_allclose(report["summary"]["ratios"], 4.0 / 3.0, atol=1e-9)


def test_seed_flag_overrides(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: simulate\nseed: 1\nn_paths: 20\nhorizon: 0.5\n"
                   "model: {name: example-e1}\n")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "99"])
    echo = parse_config((tmp_path / "a" / "resolved_config.yaml").read_text())
    assert echo.seed == 99


def test_resolved_config_reproduces_run(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: simulate\nn_paths: 30\nhorizon: 0.5\nmodel: {name: example-e1}\n")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    echo = tmp_path / "a" / "resolved_config.yaml"
    main(["simulate", "--config", str(echo), "--out", str(tmp_path / "a")])
    first = (tmp_path / "a" / "paths.csv").read_bytes()
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "b" / "paths.csv").read_bytes() == first


def test_simulate_plot_svgs(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: simulate\nn_paths: 50\nhorizon: 1.0\nmodel: {name: example-e1}\n")
    for sub in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / sub),
                     "--plot"]) == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    svgs = [a for a in report["artifacts"] if a.endswith(".svg")]
    assert sorted(svgs) == ["paths_x1.svg", "paths_x2.svg"]
    ns = {"svg": "http://www.w3.org/2000/svg", "dc": "http://purl.org/dc/elements/1.1/"}
    for name in svgs:
        data = (tmp_path / "a" / name).read_bytes()
        assert data == (tmp_path / "b" / name).read_bytes()
        root = ET.fromstring(data)
        desc = root.find(".//dc:description", ns).text
        csv = desc.split("data: ")[1]
        assert csv in report["artifacts"] and (tmp_path / "a" / csv).exists()


def test_tv_decay_svg_log_axis(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: tv-decay\nmodel:\n  name: linear\n  B: [[-1.0]]\n")
    assert main(["tv-decay", "--config", str(cfg), "--out", str(tmp_path), "--plot"]) == 0
    text = (tmp_path / "tv_curve.svg").read_text()
    ET.fromstring(text)
    # log-scaled ordinate carries 10^k tick labels
    assert "10^{" in text or "10^" in text or "10<" in text or "\\mathdefault{10^" in text


def test_error_report_written_on_bad_output_dir(tmp_path):
    cfg = parse_config("experiment: rank-check\nmodel: {name: example-e1}\n")
    blocker = tmp_path / "file"
    blocker.write_text("")
    rep = run_experiment(cfg, out_dir=str(blocker / "sub"))
    assert rep.exit_code == 1


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ergokit.cli", "orey-check", "--config",
                        str(GOLDEN / "orey_power_law.yaml"), "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "orey_converging: PASS" in r.stdout


def test_every_experiment_runs(tmp_path):
    small = {"simulate": "n_paths: 40\nhorizon: 0.5\n",
             "couple": "n_paths: 40\nhorizon: 0.5\nn_trials: 8\nmax_steps: 4\nn_kernel: 200\n",
             "tv-decay": "n_paths: 2000\ntimes: [0.5, 1.0, 1.5, 2.0]\n",
             "drift-check": "n_paths: 200\ngrid: [[5.0, 5.0], [-5.0, 5.0]]\nk_steps: 2\n",
             "rank-check": "",
             "orey-check": "",
             "invariant-check": "n_paths: 2000\nt_burn: 2.0\n"}
    for exp, extra in small.items():
        cfg = tmp_path / f"{exp}.yaml"
        cfg.write_text(f"experiment: {exp}\n{extra}model: {{name: levy-dissipative}}\n")
        code = main([exp, "--config", str(cfg), "--out", str(tmp_path / exp)])
        report = json.loads((tmp_path / exp / "report.json").read_text())
        assert code in (0, 2), (exp, report["error"])
        assert report["verdicts"]
