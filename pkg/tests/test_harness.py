import os
import subprocess
import sys

import numpy as np
import pytest

from iic import data
from iic.engine.checkpoint import load_checkpoint
from iic.harness import train as T
from iic.harness.cli import cli_main
from iic.harness.config import ConfigError, config_from_values, format_config, load_config, parse_config_text

GAUSS = """
task = cluster
dataset = gauss3
n_per_cluster = 60
jitter = 1.0
lambda = 1.5
lr = 1e-3
epochs = {epochs}
seed = 0
out = {out}
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ config


def test_parse_config_text_and_alias():
    vals = parse_config_text("# comment\ntask = segment\nlambda = 1.5  # inline\nhflip = off\ncrop_scale = 0.5, 1\n")
    assert vals == {"task": "segment", "lam": 1.5, "hflip": False, "crop_scale": (0.5, 1.0)}


@pytest.mark.parametrize("text", ["bogus = 1", "k_gt 3", "k_gt = three", "hflip = maybe"])
def test_config_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize("values", [dict(k_gt=3, k_aux=3), dict(lam=0.9), dict(task="detect"),
                                    dict(average_mode="both"), dict(h=0), dict(dtype="float16")])
def test_config_invariants(values):
    with pytest.raises(ConfigError):
        config_from_values(values)


def test_segment_defaults_and_format_round_trip(tmp_path):
    cfg = config_from_values({"task": "segment"})
    assert (cfg.h, cfg.r, cfg.base, cfg.k_aux, cfg.dataset) == (1, 1, "cnn-small", 0, "textures")
    text = format_config(cfg)
    path = write_cfg(tmp_path, text)
    assert load_config(path) == cfg


def test_epoch_schedule_alternates():
    cfg = config_from_values({})
    assert [T.epoch_kind(cfg, e)[1] for e in range(4)] == ["main", "aux", "main", "aux"]
    cfg = config_from_values({"k_aux": 0})
    assert [T.epoch_kind(cfg, e)[1] for e in range(3)] == ["main"] * 3


# ---------------------------------------------------------------- training


def small_cfg(tmp_path, **kw):
    base = dict(dataset="gauss3", n_per_cluster=60, jitter=1.0, lam=1.5, lr=1e-3, epochs=4,
                out=str(tmp_path / "run"))
    base.update(kw)
    return config_from_values(base)


def test_training_writes_artifacts_and_is_reproducible(tmp_path):
    a = T.train(small_cfg(tmp_path, out=str(tmp_path / "a")))
    b = T.train(small_cfg(tmp_path, out=str(tmp_path / "b")))
    ca = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert ca == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert len(ca.splitlines()) == 5
    assert sorted(os.listdir(tmp_path / "a")) == ["epoch_0000.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt",
                                                  "epoch_0003.ckpt", "metrics.csv"]
    assert a.acc_best == b.acc_best
    c = T.train(small_cfg(tmp_path, out=str(tmp_path / "c"), seed=1))
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != ca
    assert c.epoch == 3


def test_aux_epochs_leave_main_heads_untouched(tmp_path):
    cfg = small_cfg(tmp_path, epochs=1)
    ds = T.load_dataset(cfg)
    net = T.network_for(cfg, ds)
    opt = T.Adam(net.named_parameters(), lr=cfg.lr)
    before = {k: v.copy() for k, v in net.state_dict().items()}
    T.run_epoch(cfg, net, opt, ds, np.random.default_rng(0), epoch=1)  # aux epoch
    after = net.state_dict()
    for name in net.head_parameter_names("main"):
        np.testing.assert_array_equal(after[name], before[name])
    assert any(not np.array_equal(after[n], before[n]) for n in net.head_parameter_names("aux"))
    assert not np.array_equal(after["base.fc1.weight"], before["base.fc1.weight"])


def test_zero_epochs_changes_nothing(tmp_path):
    cfg = small_cfg(tmp_path, epochs=0)
    ds = T.load_dataset(cfg)
    fresh = T.network_for(cfg, ds).state_dict()
    rec = T.train(cfg)
    for k, v in rec.network.state_dict().items():
        np.testing.assert_array_equal(v, fresh[k])
    assert rec.history == []


def test_untrained_network_is_at_chance_when_labels_carry_no_signal():
    rng = np.random.default_rng(0)
    n = 10_000
    labels = np.arange(n) % 3
    ds = data.Dataset("vectors", rng.normal(size=(n, 2)).astype(np.float32), labels[rng.permutation(n)])
    cfg = config_from_values({"k_gt": 3, "h": 5})
    net = T.network_for(cfg, ds)
    accs, *_ = T.evaluate_heads(cfg, net, ds, np.zeros(5))
    for acc in accs:
        assert abs(acc - 1 / 3) <= 0.05


def test_nan_loss_aborts_with_diagnostic(tmp_path):
    cfg = small_cfg(tmp_path, epochs=1)
    ds = T.load_dataset(cfg)
    net = T.network_for(cfg, ds)
    net.named_parameters()["base.fc1.weight"].value[0, 0] = np.nan
    with pytest.raises(T.TrainingDiverged, match="epoch 0, main head"):
        T.run_epoch(cfg, net, T.Adam(net.named_parameters()), ds, np.random.default_rng(0), 0)


def test_evaluate_matches_final_record(tmp_path):
    cfg = small_cfg(tmp_path, epochs=6)
    rec = T.train(cfg)
    report = T.evaluate(os.path.join(cfg.out, "epoch_0005.ckpt"), cfg, "one_to_one")
    assert report["subhead_acc"] == rec.subhead_acc
    assert report["best_subhead"] == rec.best_subhead and report["epoch"] == 5
    many = T.evaluate(os.path.join(cfg.out, "epoch_0005.ckpt"), cfg, "many_to_one")
    assert many["heads"] == "aux" and len(many["subhead_acc"]) == cfg.h
    ck = load_checkpoint(os.path.join(cfg.out, "epoch_0005.ckpt"))
    assert ck["meta.subhead_loss_main"].shape == (cfg.h,)


def test_evaluate_rejects_mismatched_config(tmp_path):
    cfg = small_cfg(tmp_path, epochs=1)
    T.train(cfg)
    ckpt = os.path.join(cfg.out, "epoch_0000.ckpt")
    with pytest.raises(ValueError):
        T.evaluate(ckpt, cfg.replace(h=4), "one_to_one")
    with pytest.raises(ValueError):
        T.evaluate(ckpt, cfg.replace(k_aux=0), "many_to_one")


def test_segmentation_smoke_renders_predictions(tmp_path):
    cfg = config_from_values(dict(task="segment", n_images=6, image_size=32, d=1, epochs=1, batch_size=3,
                                  render_predictions=2, out=str(tmp_path / "seg")))
    rec = T.train_segment(cfg)
    files = sorted(os.listdir(tmp_path / "seg"))
    assert "pred_0000_000.pnm" in files and "pred_0000_001.pnm" in files
    img = data.read_pnm(tmp_path / "seg" / "pred_0000_000.pnm")
    assert img.shape == (32, 32, 3)
    assert 0 <= rec.acc_best <= 1
    with pytest.raises(ValueError):
        T.train_cluster(cfg)


def test_segmentation_identity_pairs_avoid_collapse(tmp_path):
    # no transforms, d = 0: the objective alone must keep all clusters in use
    cfg = config_from_values(dict(task="segment", n_images=24, image_size=32, d=0, epochs=6, lr=1e-3,
                                  hflip=False, crop=False, color=False, checkpoint_every=0,
                                  render_predictions=0, out=str(tmp_path / "seg0")))
    rec = T.train_segment(cfg)
    assert min(rec.min_marginal) >= 0.1


def test_upsample_is_corner_aligned():
    p = np.zeros((1, 2, 3, 3))
    p[0, 0, :, :2] = 1
    p[0, 1, :, 2] = 1
    up = T.upsample(p, (9, 9))
    np.testing.assert_allclose(up[0, :, ::4, ::4], p[0])
    np.testing.assert_allclose(up[0, 0, 0], [1, 1, 1, 1, 1, 0.75, 0.5, 0.25, 0])


# --------------------------------------------------------------------- CLI


def test_cli_train_eval_and_report(tmp_path, capsys):
    out = tmp_path / "g"
    cfg = write_cfg(tmp_path, GAUSS.format(epochs=3, out=out))
    assert cli_main(["train-cluster", "--config", cfg, "--seed", "7"]) == 0
    assert (out / "metrics.csv").exists() and (out / "epoch_0002.ckpt").exists()
    assert cli_main(["eval", "--config", cfg, "--protocol", "many_to_one"]) == 0
    listing = os.listdir(out)
    for name in ("report_many_to_one.tsv", "subheads_many_to_one.png", "confusion_many_to_one.png",
                 "training_curves.png"):
        assert name in listing
    tsv = (out / "report_many_to_one.tsv").read_text().splitlines()
    assert tsv[0] == "subhead\tloss\taccuracy\tbest" and len(tsv) == 1 + 5 + 6
    assert "<- best (lowest loss)" in capsys.readouterr().out


def test_cli_show_config_and_overrides(tmp_path, capsys):
    cfg = write_cfg(tmp_path, GAUSS.format(epochs=3, out=tmp_path / "x"))
    assert cli_main(["show-config", "--config", cfg, "--epochs", "9"]) == 0
    shown = capsys.readouterr().out
    assert "epochs = 9" in shown and "lambda = 1.5" in shown and "batch_size = 128" in shown


def test_cli_gen_synth(tmp_path):
    cfg = write_cfg(tmp_path, f"task = segment\nn_images = 2\nimage_size = 32\nout = {tmp_path / 's'}\n")
    assert cli_main(["gen-synth", "--config", cfg]) == 0
    assert sorted(os.listdir(tmp_path / "s")) == ["img_000.pnm", "img_001.pnm", "mask_000.pnm", "mask_001.pnm"]
    cfg = write_cfg(tmp_path, f"n_per_cluster = 4\nout = {tmp_path / 'p'}\n", "p.cfg")
    assert cli_main(["gen-synth", "--config", cfg]) == 0
    assert len((tmp_path / "p" / "points.csv").read_text().splitlines()) == 13


def test_cli_exit_codes(tmp_path, capsys):
    assert cli_main(["train-cluster", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "usage:" in capsys.readouterr().err
    assert cli_main(["frobnicate"]) == 1
    assert cli_main([]) == 1
    cfg = write_cfg(tmp_path, GAUSS.format(epochs=1, out=tmp_path / "e"))
    assert cli_main(["train-cluster", "--config", cfg, "--bogus"]) == 1
    assert cli_main(["train-seg", "--config", cfg]) == 1  # task mismatch
    bad = write_cfg(tmp_path, "k_gt = 1\n", "bad.cfg")
    assert cli_main(["show-config", "--config", bad]) == 1
    # runtime failure: no checkpoints to evaluate
    assert cli_main(["eval", "--config", cfg]) == 2
    idx = write_cfg(tmp_path, f"dataset = idx\nidx_images = {tmp_path / 'nope'}\nout = {tmp_path}\n", "i.cfg")
    assert cli_main(["train-cluster", "--config", idx]) == 2


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, GAUSS.format(epochs=1, out=tmp_path / "m"))
    done = subprocess.run([sys.executable, "-m", "iic", "show-config", "--config", cfg],
                          capture_output=True, text=True)
    assert done.returncode == 0 and "task = cluster" in done.stdout
    done = subprocess.run([sys.executable, "-m", "iic", "eval"], capture_output=True, text=True)
    assert done.returncode == 1
