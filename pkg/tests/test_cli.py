from safnet.cli import bench_state_buffers, cli_main
from safnet.mathops import make_rng
from safnet.network import random_network


def test_no_subcommand_prints_usage(capsys):
    assert cli_main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert cli_main(["frobnicate"]) != 0


def test_train_without_dataset_is_config_error(capsys):
    assert cli_main(["train"]) == 2
    assert "config error" in capsys.readouterr().err


def test_train_then_infer(tmp_path, capsys):
    ck = tmp_path / "net.txt"
    metrics = tmp_path / "m.csv"
    args = ["--dataset", "two-moons", "--n-samples", "64", "--test-samples", "32", "--hidden", "6", "--batch-size", "16"]
    assert cli_main(["train", *args, "--epochs", "1", "--metrics", str(metrics), "--checkpoint", str(ck)]) == 0
    assert metrics.read_text().startswith("epoch,split,accuracy,loss,total_rate")
    assert cli_main(["infer", *args, "--checkpoint", str(ck)]) == 0
    out = capsys.readouterr().out
    assert "accuracy_lif=" in out and "delta=" in out


def test_verify_is_deterministic(capsys, tmp_path):
    argv = ["verify", "--seed", "7", "--trials", "4", "--suite", "forward", "--suite", "final-step-scale", "--csv-dir", str(tmp_path)]
    assert cli_main(argv) == 0
    first = capsys.readouterr().out
    assert cli_main(argv) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "forward.csv").exists()


def test_compare_grads(capsys):
    argv = ["compare-grads", "--dataset", "two-moons", "--n-samples", "64", "--hidden", "6", "--engines", "saf-e", "ottt-o"]
    assert cli_main(argv) == 0
    assert "corr=1.000000" in capsys.readouterr().out


def test_bench_shape_check(capsys):
    assert cli_main(["bench", "--hidden", "4", "--reps", "1", "--batch", "2", "--horizons", "4", "8", "16"]) == 0
    assert "SAF flat" in capsys.readouterr().out


def test_bench_counts():
    spec = random_network([2, 4, 2], make_rng(0))
    saf, lif, ok = bench_state_buffers(spec, [4, 8, 16, 32])
    assert ok and len(set(saf.values())) == 1 and lif[32] - lif[16] == 2 * (lif[16] - lif[8])
