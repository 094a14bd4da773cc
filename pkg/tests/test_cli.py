"""End-to-end tests for the command line interface.

Everything runs in process through cli.main(argv) so exit codes and
printed output can be asserted directly.
"""

import re

import pytest

from dialparse.cli import main
from dialparse.conllu import read_conllu
from dialparse.trainer import load_checkpoint

TINY_DIMS = [
    "--set", "d_w=12", "--set", "d_c=6", "--set", "d_ch=8", "--set", "d_f=6",
    "--set", "d_h=12", "--set", "layers=1", "--set", "d_a=12", "--set", "d_r=8",
    "--set", "min_word_freq=1",
]


def run_cli(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated data plus a tiny trained checkpoint, shared per module."""
    root = tmp_path_factory.mktemp("cliwork")
    paths = {
        "a": str(root / "a.conllu"),
        "b": str(root / "b.conllu"),
        "train": str(root / "train.conllu"),
        "dev": str(root / "dev.conllu"),
        "ckpt": str(root / "model.ckpt"),
    }
    assert main([
        "--quiet", "synth", "generate", "--out", paths["a"],
        "--sentences", "60", "--seed", "5", "--grammar-seed", "3", "--tag", "A",
    ]) == 0
    assert main([
        "--quiet", "synth", "generate", "--out", paths["b"],
        "--sentences", "40", "--seed", "6", "--grammar-seed", "3",
        "--marker-strategy", "marker", "--swap-rate", "0.3", "--tag", "B",
    ]) == 0
    assert main([
        "--quiet", "split", "--input", paths["a"],
        "--train-out", paths["train"], "--dev-out", paths["dev"],
        "--fraction", "0.8", "--seed", "1",
    ]) == 0
    assert main([
        "--quiet", "train", "--train", paths["train"], "--dev", paths["dev"],
        "--out", paths["ckpt"], "--max-epochs", "2", "--batch-size", "16",
        *TINY_DIMS,
    ]) == 0
    return paths


class TestGenerateAndSplit:
    def test_generate_is_deterministic(self, capsys, tmp_path):
        out1 = str(tmp_path / "g1.conllu")
        out2 = str(tmp_path / "g2.conllu")
        for out in (out1, out2):
            rc, _, _ = run_cli(
                capsys, "--quiet", "synth", "generate", "--out", out,
                "--sentences", "25", "--seed", "9", "--grammar-seed", "2",
            )
            assert rc == 0
        assert open(out1).read() == open(out2).read()

    def test_split_reports_counts(self, capsys, tmp_path, workspace):
        rc, out, _ = run_cli(
            capsys, "split", "--input", workspace["a"],
            "--train-out", str(tmp_path / "tr.conllu"),
            "--dev-out", str(tmp_path / "dv.conllu"),
            "--fraction", "0.5", "--seed", "2",
        )
        assert rc == 0
        assert "30 train / 30 dev" in out


class TestTrainParseEvaluate:
    def test_train_wrote_a_loadable_checkpoint(self, workspace):
        model, config, history, best_epoch, best_las = load_checkpoint(
            workspace["ckpt"]
        )
        assert config.d_h == 12
        assert len(history) == 2
        assert 1 <= best_epoch <= 2

    def test_parse_to_file_and_evaluate(self, capsys, tmp_path, workspace):
        pred = str(tmp_path / "pred.conllu")
        rc, out, _ = run_cli(
            capsys, "parse", "--checkpoint", workspace["ckpt"],
            "--input", workspace["dev"], "--output", pred,
        )
        assert rc == 0
        assert "parsed 12 sentences" in out
        rc, out, _ = run_cli(
            capsys, "evaluate", "--gold", workspace["dev"], "--pred", pred,
        )
        assert rc == 0
        assert re.search(r"^UAS \d+\.\d% LAS \d+\.\d%$", out, re.M)
        assert "scored tokens:" in out

    def test_parse_to_stdout(self, capsys, workspace):
        rc, out, _ = run_cli(
            capsys, "parse", "--checkpoint", workspace["ckpt"],
            "--input", workspace["dev"], "--output", "-",
        )
        assert rc == 0
        assert out.count("# sent_id") == 12
        assert out.endswith("\n")

    def test_multi_root_notice_goes_to_stderr(self, capsys, workspace):
        rc, out, err = run_cli(
            capsys, "parse", "--checkpoint", workspace["ckpt"],
            "--input", workspace["dev"], "--output", "-", "--multi-root",
        )
        assert rc == 0
        assert "single-root" in err
        assert "single-root" not in out

    def test_evaluate_writes_tsv(self, capsys, tmp_path, workspace):
        pred = str(tmp_path / "pred.conllu")
        run_cli(
            capsys, "parse", "--checkpoint", workspace["ckpt"],
            "--input", workspace["dev"], "--output", pred,
        )
        tsv = str(tmp_path / "scores.tsv")
        rc, _, _ = run_cli(
            capsys, "evaluate", "--gold", workspace["dev"], "--pred", pred,
            "--tsv", tsv,
        )
        assert rc == 0
        lines = open(tsv).read().strip().split("\n")
        assert lines[0].startswith("regime\tuas\tlas")
        assert len(lines) == 2

    def test_missing_input_fails_cleanly(self, capsys, tmp_path, workspace):
        rc, _, err = run_cli(
            capsys, "parse", "--checkpoint", workspace["ckpt"],
            "--input", str(tmp_path / "missing.conllu"), "--output", "-",
        )
        assert rc == 1
        assert "error:" in err


class TestFinetuneCli:
    def test_finetune_defaults_to_half_lr(self, capsys, tmp_path, workspace, caplog):
        out_ckpt = str(tmp_path / "ft.ckpt")
        with caplog.at_level("INFO", logger="dialparse"):
            rc, _, _ = run_cli(
                capsys, "finetune", "--checkpoint", workspace["ckpt"],
                "--train", workspace["b"], "--dev", workspace["dev"],
                "--out", out_ckpt, "--max-epochs", "1",
            )
        assert rc == 0
        assert any("half the checkpoint's" in m for m in caplog.messages)
        _, config, _, _, _ = load_checkpoint(out_ckpt)
        assert config.lr == pytest.approx(0.001)

    def test_finetune_rejects_dimension_changes(self, capsys, tmp_path, workspace):
        rc, _, err = run_cli(
            capsys, "finetune", "--checkpoint", workspace["ckpt"],
            "--train", workspace["b"], "--dev", workspace["dev"],
            "--out", str(tmp_path / "ft.ckpt"),
            "--set", "d_h=64",
        )
        assert rc == 1
        assert "fixed by the checkpoint" in err


class TestSettingsPlumbing:
    def test_config_file_applies_and_flags_win(self, capsys, tmp_path, workspace):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(
            "# tiny run\n"
            "d_w=12\nd_c=6\nd_ch=8\nd_f=6\nd_h=12\nlayers=1\nd_a=12\nd_r=8\n"
            "min_word_freq=1\nmax_epochs=5\nbatch_size=16\n"
        )
        out_ckpt = str(tmp_path / "m.ckpt")
        rc, _, _ = run_cli(
            capsys, "--quiet", "train", "--train", workspace["train"],
            "--dev", workspace["dev"], "--out", out_ckpt,
            "--config", str(cfg), "--max-epochs", "1",
        )
        assert rc == 0
        _, config, history, _, _ = load_checkpoint(out_ckpt)
        assert config.max_epochs == 1  # flag beat the file
        assert config.batch_size == 16  # file beat the default
        assert len(history) == 1

    def test_unknown_setting_fails(self, capsys, tmp_path, workspace):
        rc, _, err = run_cli(
            capsys, "train", "--train", workspace["train"],
            "--dev", workspace["dev"], "--out", str(tmp_path / "x.ckpt"),
            "--set", "warmup=3",
        )
        assert rc == 1
        assert "unknown training setting" in err

    def test_malformed_set_pair_fails(self, capsys, tmp_path, workspace):
        rc, _, err = run_cli(
            capsys, "train", "--train", workspace["train"],
            "--dev", workspace["dev"], "--out", str(tmp_path / "x.ckpt"),
            "--set", "lr",
        )
        assert rc == 1
        assert "name=value" in err

    def test_type_errors_are_reported(self, capsys, tmp_path, workspace):
        rc, _, err = run_cli(
            capsys, "train", "--train", workspace["train"],
            "--dev", workspace["dev"], "--out", str(tmp_path / "x.ckpt"),
            "--set", "max_epochs=soon",
        )
        assert rc == 1
        assert "expects an integer" in err


class TestExperimentCli:
    def test_micro_experiment_runs(self, capsys, tmp_path):
        out_dir = str(tmp_path / "exp")
        rc, out, _ = run_cli(
            capsys, "--quiet", "synth", "experiment", "--out", out_dir,
            "--seed", "3", "--n-a", "40", "--n-b", "30", "--n-c", "12",
            "--set", "train.d_w=12", "--set", "train.d_c=6",
            "--set", "train.d_ch=8", "--set", "train.d_f=6",
            "--set", "train.d_h=12", "--set", "train.layers=1",
            "--set", "train.d_a=12", "--set", "train.d_r=8",
            "--set", "train.max_epochs=2", "--set", "train.batch_size=16",
            "--set", "train.min_word_freq=1",
        )
        assert rc == 0
        assert "A-only" in out and "A-then-B" in out
        assert "outputs written" in out
        assert (tmp_path / "exp" / "report.tsv").exists()

    def test_unknown_experiment_setting_fails(self, capsys, tmp_path):
        rc, _, err = run_cli(
            capsys, "synth", "experiment", "--out", str(tmp_path / "e"),
            "--set", "n_d=5",
        )
        assert rc == 1
        assert "unknown experiment setting" in err


class TestGradcheckCli:
    def test_gradcheck_passes(self, capsys):
        rc, out, _ = run_cli(capsys, "gradcheck", "--seed", "11")
        assert rc == 0
        assert out.count("[ok]") == 3
        assert "all gradient checks passed" in out

    def test_gradcheck_fails_with_impossible_tolerance(self, capsys):
        rc, out, _ = run_cli(
            capsys, "gradcheck", "--seed", "11", "--tolerance", "1e-18",
        )
        assert rc == 1
        assert "FAIL" in out


class TestArgumentErrors:
    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2
