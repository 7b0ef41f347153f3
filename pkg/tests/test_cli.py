"""End-to-end runs of the command-line front end, in process."""

import json
import os

import numpy as np
import pytest

from ibrar.checkpoint import load_checkpoint
from ibrar.cli import main
from ibrar.data import load_idx_pair

BASE = """\
seed = 3
dataset.classes = 3
dataset.per_class = 30
dataset.size = 8
dataset.noise = 0.05
network.preset = tiny
train.epochs = 2
train.batch_size = 20
train.mask_after_epoch = off
ib.beta = 0.1
"""


def write_cfg(tmp_path, extra="", name="exp.cfg"):
    p = tmp_path / name
    p.write_text(BASE + extra)
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One trained checkpoint shared by the read-only subcommand tests."""
    root = tmp_path_factory.mktemp("trained")
    cfg = write_cfg(root)
    out = str(root / "run")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    return cfg, out, os.path.join(out, "model.ckpt")


class TestTrain:
    def test_outputs_and_exit_code(self, trained, capsys):
        _, out, ckpt = trained
        for name in ("model.ckpt", "run.json", "run.csv", "run_epochs.csv",
                     "run_infoplane.csv"):
            assert os.path.exists(os.path.join(out, name)), name
        payload = json.loads(open(os.path.join(out, "run.json")).read())
        assert len(payload["epoch_natural_acc"]) == 2
        assert payload["seed"] == 3
        net = load_checkpoint(ckpt)
        assert net.checkpoint_meta == {"seed": 3, "epoch": 2}

    def test_reruns_are_byte_identical_across_out_dirs(self, trained, tmp_path):
        cfg, out1, _ = trained
        out2 = str(tmp_path / "again")
        assert main(["train", "--config", cfg, "--out", out2]) == 0
        for name in ("model.ckpt", "run.json", "run.csv", "run_epochs.csv",
                     "run_infoplane.csv"):
            a = open(os.path.join(out1, name), "rb").read()
            b = open(os.path.join(out2, name), "rb").read()
            assert a == b, name

    def test_wall_clock_never_serialized(self, trained):
        _, out, _ = trained
        assert "wall" not in open(os.path.join(out, "run.json")).read()

    def test_out_dir_not_serialized(self, trained):
        _, out, _ = trained
        payload = json.loads(open(os.path.join(out, "run.json")).read())
        assert "out.dir" not in payload["config"]


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="train.lr = -1\n")
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "ibrar: config error: TrainConfig: lr" in capsys.readouterr().err

    def test_unknown_key_is_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="train.optimizer = adam\n")
        assert main(["train", "--config", cfg]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_checkpoint_flag_is_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "needs --checkpoint" in capsys.readouterr().err

    def test_absent_checkpoint_file_is_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        code = main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--checkpoint", str(tmp_path / "nope.ckpt")])
        assert code == 1
        assert capsys.readouterr().err.startswith("ibrar: ")

    def test_corrupt_checkpoint_is_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTIBRAR" * 4)
        code = main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--checkpoint", str(bad)])
        assert code == 1
        assert "magic" in capsys.readouterr().err


class TestEvaluate:
    def test_eps_zero_attack_matches_natural(self, trained, tmp_path, capsys):
        cfg, _, ckpt = trained
        out = str(tmp_path / "ev")
        code = main(["evaluate", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "attack.pgd.eps=0",
                     "--set", "attack.pgd.step=0"])
        assert code == 0
        payload = json.loads(open(os.path.join(out, "eval.json")).read())
        assert payload["adv_acc"]["pgd"] == payload["natural_acc"]

    def test_multiple_attacks_in_csv_header(self, trained, tmp_path):
        cfg, _, ckpt = trained
        out = str(tmp_path / "ev")
        code = main(["evaluate", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "eval.attacks=fgsm,pgd",
                     "--set", "adv.steps=3"])
        assert code == 0
        header = open(os.path.join(out, "eval.csv")).readline().strip()
        assert header == "seed,natural_acc,fgsm,pgd"

    def test_tendency_file(self, trained, tmp_path):
        cfg, _, ckpt = trained
        out = str(tmp_path / "ev")
        code = main(["evaluate", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "eval.tendency=true",
                     "--set", "adv.steps=3"])
        assert code == 0
        lines = open(os.path.join(out, "eval_tendency.txt")).read().splitlines()
        assert lines and all(" : " in line for line in lines)

    def test_deterministic_across_runs(self, trained, tmp_path):
        cfg, _, ckpt = trained
        outs = [str(tmp_path / d) for d in ("e1", "e2")]
        for out in outs:
            assert main(["evaluate", "--config", cfg, "--out", out,
                         "--checkpoint", ckpt, "--set", "adv.steps=3"]) == 0
        a = open(os.path.join(outs[0], "eval.json"), "rb").read()
        b = open(os.path.join(outs[1], "eval.json"), "rb").read()
        assert a == b


class TestAttack:
    def test_artifacts_round_trip(self, trained, tmp_path):
        cfg, _, ckpt = trained
        out = str(tmp_path / "atk")
        code = main(["attack", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "adv.steps=3"])
        assert code == 0
        adv_set = load_idx_pair(os.path.join(out, "adv_pgd_images.idx"),
                                os.path.join(out, "adv_pgd_labels.idx"),
                                classes=3)
        assert len(adv_set) == 18  # 3 classes x 30//5 held-out examples
        payload = json.loads(open(os.path.join(out, "attack.json")).read())
        assert set(payload["adv_acc"]) == {"pgd"}

    def test_perturbation_respects_budget(self, trained, tmp_path):
        cfg, _, ckpt = trained
        out = str(tmp_path / "atk")
        assert main(["attack", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "adv.steps=3"]) == 0
        from ibrar.config import load_spec
        from ibrar.data import load_dataset
        _, test_set = load_dataset(load_spec(cfg).source)
        adv_set = load_idx_pair(os.path.join(out, "adv_pgd_images.idx"),
                                os.path.join(out, "adv_pgd_labels.idx"),
                                classes=3)
        np.testing.assert_array_equal(adv_set.labels, test_set.labels)
        # eps budget plus half a u8 quantization step on each side
        gap = np.abs(adv_set.images - test_set.images).max()
        assert gap <= 0.1 + 1.0 / 255.0


class TestComputeMask:
    def test_masked_checkpoint_and_json(self, trained, tmp_path):
        cfg, _, ckpt = trained
        out = str(tmp_path / "mask")
        code = main(["compute-mask", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "train.mask_batches=2"])
        assert code == 0
        info = json.loads(open(os.path.join(out, "mask.json")).read())
        assert info["removed"] == 1  # 5% of 16 channels, floor-half-up, min 1
        assert len(info["indices"]) == 1
        assert sum(info["phi"]) == 15
        masked = load_checkpoint(os.path.join(out, "model_masked.ckpt"))
        assert masked.mask is not None
        assert masked.mask.removed == 1


class TestSweep:
    def test_rows_and_reports(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="sweep.betas = 0.05, 0.2\nadv.steps = 3\n")
        out = str(tmp_path / "sw")
        assert main(["sweep", "--config", cfg, "--out", out,
                     "--set", "train.epochs=1"]) == 0
        rows = json.loads(open(os.path.join(out, "sweep.json")).read())["rows"]
        assert [r["beta"] for r in rows] == [0.05, 0.2]
        for r in rows:
            assert r["alpha"] == pytest.approx(0.1 * r["beta"])
        assert os.path.exists(os.path.join(out, "run_beta0.05.json"))
        assert os.path.exists(os.path.join(out, "run_beta0.2.json"))
        lines = open(os.path.join(out, "sweep.csv")).read().splitlines()
        assert lines[0] == "alpha,beta,seed,natural_acc,pgd"
        assert len(lines) == 3

    def test_without_betas_is_config_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "sweep needs sweep.betas" in capsys.readouterr().err


class TestReport:
    def test_rerender_reproduces_run_files(self, trained, tmp_path):
        cfg, out, _ = trained
        red = str(tmp_path / "re")
        src = os.path.join(out, "run.json")
        code = main(["report", "--config", cfg, "--out", red,
                     "--set", f"report.source={src}"])
        assert code == 0
        assert open(os.path.join(red, "report.json"), "rb").read() == \
            open(src, "rb").read()
        assert open(os.path.join(red, "report.csv"), "rb").read() == \
            open(os.path.join(out, "run.csv"), "rb").read()
        assert open(os.path.join(red, "report_infoplane.csv"), "rb").read() == \
            open(os.path.join(out, "run_infoplane.csv"), "rb").read()

    def test_missing_source_is_config_error(self, trained, tmp_path, capsys):
        cfg, _, _ = trained
        assert main(["report", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_unreadable_source_is_runtime_error(self, trained, tmp_path, capsys):
        cfg, _, _ = trained
        code = main(["report", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--set", f"report.source={tmp_path / 'absent.json'}"])
        assert code == 1


class TestSelectLayers:
    def test_table_and_outputs(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="adv.steps = 2\n")
        out = str(tmp_path / "sel")
        assert main(["select-layers", "--config", cfg, "--out", out,
                     "--set", "dataset.per_class=20", "--set", "train.epochs=1"]) == 0
        info = json.loads(open(os.path.join(out, "select_layers.json")).read())
        assert [row[0] for row in info["table"]] == [0, 1, 2, 3]
        lines = open(os.path.join(out, "select_layers.csv")).read().splitlines()
        assert lines[0] == "layer,adv_acc,test_acc"
        assert len(lines) == 5


class TestInputFilesUntouched:
    def test_idx_inputs_not_modified(self, trained, tmp_path):
        from ibrar.config import load_spec
        from ibrar.data import load_dataset, write_idx_images, write_idx_labels
        _, test_set = load_dataset(load_spec(write_cfg(tmp_path)).source)
        u8 = np.round(test_set.images[:, 0] * 255.0).astype(np.uint8)
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx_images(ip, u8)
        write_idx_labels(lp, test_set.labels.astype(np.uint8))
        before = (ip.read_bytes(), lp.read_bytes())
        cfg = write_cfg(tmp_path, name="idx.cfg", extra=(
            f"dataset.kind = idx\ndataset.images = {ip}\ndataset.labels = {lp}\n"))
        _, _, ckpt = trained
        out = str(tmp_path / "atk")
        assert main(["attack", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt, "--set", "adv.steps=2"]) == 0
        assert (ip.read_bytes(), lp.read_bytes()) == before
