import os
import subprocess
import sys

import pytest

from guidedrl.cli import main
from guidedrl.config import ExperimentConfig, save_config
from guidedrl.guidance import load_guide_q
from guidedrl.harness import METRICS_FILE


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One tiny unguided run shared by the evaluate/aggregate/plot tests."""
    root = tmp_path_factory.mktemp("runs")
    cfg_path = root / "exp.cfg"
    save_config(
        ExperimentConfig(
            env="point_reach", variant="none", total_steps=1500,
            eval_period=500, buffer_capacity=3000, output_dir=str(root),
        ),
        cfg_path,
    )
    for seed in (0, 1):
        assert main(["train", "--config", str(cfg_path), "--seed", str(seed)]) == 0
    return root


def test_no_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code != 0


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["describe"])


def test_pretrain_guide_writes_network(tmp_path, capsys):
    out = tmp_path / "deep" / "point.qg"
    code = main([
        "pretrain-guide", "--env", "point_reach", "--steps", "1200",
        "--out", str(out), "--seed", "3",
    ])
    assert code == 0
    guide_q = load_guide_q(str(out))
    assert guide_q.network.layer_sizes == [6, 64, 64, 1]
    assert "controller ever succeeded: True" in capsys.readouterr().out


def test_pretrain_guide_mc_method(tmp_path):
    out = tmp_path / "point_mc.qg"
    code = main([
        "pretrain-guide", "--env", "point_reach", "--steps", "1200",
        "--out", str(out), "--method", "mc",
    ])
    assert code == 0
    assert os.path.exists(out)


def test_train_produces_run(trained_run, capsys):
    rdir = trained_run / "point_reach__none" / "seed_0"
    assert (rdir / METRICS_FILE).exists()
    assert (rdir / "snapshot" / "actor.mlp").exists()


def test_evaluate_prints_rate(trained_run, capsys):
    code = main([
        "evaluate", "--snapshot",
        str(trained_run / "point_reach__none" / "seed_0" / "snapshot"),
        "--env", "point_reach", "--episodes", "20",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "success_rate = " in out
    assert "over 20 episodes" in out


def test_aggregate_variant_dir(trained_run, capsys):
    code = main([
        "aggregate", "--runs", str(trained_run / "point_reach__none")
    ])
    assert code == 0
    assert (trained_run / "point_reach__none" / "aggregate.csv").exists()


def test_aggregate_root_dir(trained_run, capsys):
    code = main(["aggregate", "--runs", str(trained_run)])
    assert code == 0
    assert "aggregate.csv" in capsys.readouterr().out


def test_aggregate_empty_dir_fails(tmp_path, capsys):
    assert main(["aggregate", "--runs", str(tmp_path)]) == 1
    assert "no seed_" in capsys.readouterr().err


def test_plot_renders_curves(trained_run, tmp_path, capsys):
    out = tmp_path / "figs"
    assert main(["plot", "--curves", str(trained_run), "--out", str(out)]) == 0
    names = sorted(os.listdir(out))
    assert names == [
        "point_reach__bc_loss.svg",
        "point_reach__filter_fraction.svg",
        "point_reach__success_rate.svg",
    ]


def test_plot_without_curves_fails(tmp_path, capsys):
    empty = tmp_path / "none_here"
    empty.mkdir()
    assert main(["plot", "--curves", str(empty), "--out", str(tmp_path)]) == 1


def test_console_script_help():
    proc = subprocess.run(
        [sys.executable, "-m", "guidedrl.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    for sub in ("pretrain-guide", "train", "evaluate", "aggregate", "plot"):
        assert sub in proc.stdout
