import json
from pathlib import Path

import pytest

from opl.cli import EXIT_CONFIG, EXIT_OK, ConfigError, ExperimentConfig, ExperimentReport, emit_plots_data, main, run_suite, write_run

QUICK = Path(__file__).resolve().parents[1] / "configs" / "quick.json"


def test_validate_defaults(capsys):
    assert main(["validate"]) == EXIT_OK
    assert "config ok" in capsys.readouterr().out


def test_validate_quick_config():
    assert main(["validate", "--config", str(QUICK)]) == EXIT_OK


@pytest.mark.parametrize(
    "cfg",
    [
        {"dataset": {"delta": 0.0}},
        {"training": {"sgd_batch": 99}},
        {"arch": {"width": 0}},
        {"suite": "nope"},
        {"typo": 1},
        {"arch": {"widht": 10}},
        {"landscape": {"grid_steps": [3]}},
    ],
)
def test_bad_configs_exit_2(tmp_path, cfg):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["validate", "--config", str(path)]) == EXIT_CONFIG


def test_malformed_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_config_round_trip():
    cfg = ExperimentConfig.load(QUICK)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.hash() == cfg.hash()


def test_output_dir_does_not_change_hash():
    a, b = ExperimentConfig(), ExperimentConfig(out="/elsewhere")
    assert a.hash() == b.hash()


def test_depth_warning():
    cfg = ExperimentConfig.from_dict({"arch": {"depth": 20}})
    assert cfg.warnings()


def test_empty_report_writes_no_plot_files(tmp_path):
    rep = ExperimentReport("all", "x")
    assert emit_plots_data(rep, tmp_path) == []
    res = write_run(rep, ExperimentConfig(), tmp_path, 0.0)
    assert res["files"] == []
    assert json.loads((tmp_path / "metadata.json").read_text())["note"] == "nothing to emit"


def test_suite_run_and_emit(tmp_path):
    cfg = ExperimentConfig.load(QUICK)
    cfg.suite = "landscape"
    rep = run_suite(cfg)
    res = write_run(rep, cfg, tmp_path, 0.0)
    names = {p.name for p in res["files"]}
    grids = [n for n in names if n.endswith(".csv") and n.startswith("grid")]
    assert grids and (tmp_path / grids[0]).read_text().splitlines()[0] == "s1,s2,F"
    assert ExperimentReport.summary_from_file(tmp_path / "report.json") == rep.summary
    assert (tmp_path / "report.sha256").read_text().strip() == rep.hash()


def test_ntk_suite_tables(tmp_path):
    cfg = ExperimentConfig.load(QUICK)
    cfg.suite = "ntk"
    rep = run_suite(cfg)
    emit_plots_data(rep, tmp_path)
    eq = [p for p in tmp_path.glob("*.csv") if "equivalence" in p.name]
    assert eq and eq[0].read_text().splitlines()[0] == "omega,m,grad_ratio,first_order_residual,kernel_dev"
