import csv
import subprocess
import sys

import pytest

from mcae.cli import build_parser, dispatch
from mcae.config import load_run_config

FAST = [
    "--preset", "micro",
    "--epochs", "2",
    "--finetune-epochs", "1",
    "--synthetic-domains", "3",
    "--per-class", "4",
    "--batch-size", "12",
    "--finetune-batch-size", "12",
]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _help(command):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[command]
    return " ".join(sub.format_help().split())


def test_help_lists_stated_defaults():
    text = _help("pretrain")
    for fragment in (
        "--mask-ratio MASK_RATIO schedule.mask_ratio (default: 0.85)",
        "--decoder-width DECODER_WIDTH decoder.width (default: 512)",
        "--decoder-depth DECODER_DEPTH decoder.depth (default: 8)",
        "--tau TAU contrastive.temperature (default: 0.1)",
        "--lambda-cross LAMBDA_CROSS contrastive.lambda_live_cross (default: 2.0)",
        "--lambda-same LAMBDA_SAME contrastive.lambda_live_same (default: 1.0)",
        "--lambda-spoof LAMBDA_SPOOF contrastive.lambda_spoof (default: 1.0)",
    ):
        assert fragment in text, fragment
    for flag in ("--config", "--out-dir", "--seed", "--epochs", "--batch-size", "--beta", "--epsilon",
                 "--switch-epoch", "--gate-mode", "--parallel-folds"):
        assert flag in text, flag


def test_exit_codes(tmp_path, capsys):
    assert dispatch(["pretrain", "--no-such-flag"]) == 1
    assert dispatch(["no-such-command"]) == 1
    assert dispatch(["pretrain", *FAST, "--mask-ratio", "1.5", "--out", str(tmp_path / "a")]) == 1
    assert dispatch(["pretrain", *FAST, "--config", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "b")]) == 1
    assert dispatch(["finetune", *FAST, "--checkpoint", str(tmp_path / "none"), "--out", str(tmp_path / "c")]) == 2
    assert dispatch(["ablate", *FAST, "--mode", "bogus", "--out", str(tmp_path / "d")]) == 1


def test_entry_point_help_and_error():
    ok = subprocess.run([sys.executable, "-m", "mcae.cli", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "sweep-mask-ratio" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "mcae.cli", "pretrain", "--bogus"], capture_output=True, text=True)
    assert bad.returncode == 1


def test_synth_data_layout(tmp_path):
    assert dispatch(["synth-data", "--domains", "4", "--per-class", "50", "--image-size", "16", "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert names == ["domain0", "domain1", "domain2", "domain3"]
    for name in names:
        for sub in ("live", "spoof"):
            assert len(list((tmp_path / name / sub).glob("*.png"))) == 50


def test_pretrain_finetune_pipeline(tmp_path, capsys):
    out = tmp_path / "pre"
    assert dispatch(["pretrain", *FAST, "--out", str(out)]) == 0
    echoed = capsys.readouterr().out
    assert "schedule.mask_ratio=0.85" in echoed
    cfg = load_run_config(out / "config.txt")
    assert cfg.schedule.total_epochs == 2 and cfg.schedule.switch_epoch == 1
    metrics = _rows(out / "metrics.csv")
    assert [r["stage"] for r in metrics] == ["rec_only", "rec_plus_con"]
    assert metrics[0]["con_loss"] == "" and metrics[1]["con_loss"] != ""
    ft = tmp_path / "ft"
    assert dispatch(["finetune", *FAST, "--checkpoint", str(out / "checkpoint"), "--out", str(ft)]) == 0
    assert (ft / "finetuned" / "index.txt").is_file()
    assert len(_rows(ft / "finetune_metrics.csv")) == 1


def test_data_dir_and_limited_source(tmp_path):
    data = tmp_path / "data"
    assert dispatch(["synth-data", "--domains", "4", "--per-class", "4", "--image-size", "16", "--out", str(data)]) == 0
    out = tmp_path / "lim"
    argv = ["eval-limited", *FAST, "--data", str(data), "--sources", "domain0,domain2", "--out", str(out)]
    assert dispatch(argv) == 0
    rows = _rows(out / "results.csv")
    assert [r["test_domain"] for r in rows] == ["domain1", "domain3"]
    assert all(r["train_domains"] == "domain0&domain2" for r in rows)
    assert (out / "results_summary.txt").is_file()


def test_eval_loo_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["eval-loo", *FAST, "--out", str(a)]) == 0
    assert dispatch(["eval-loo", *FAST, "--out", str(b)]) == 0
    for name in ("results.csv", "results_summary.txt", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = _rows(a / "results.csv")
    assert len(rows) == 3 and rows[0]["threshold_policy"] == "min_hter"


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MCAE_OUT_DIR", str(tmp_path / "env"))
    assert dispatch(["verify-theory"]) == 0
    assert (tmp_path / "env" / "theory_report.csv").is_file()


def test_verify_theory_report(tmp_path):
    assert dispatch(["verify-theory", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "theory_report.csv")
    assert len(rows) == 7 and all(r["pass"] == "True" for r in rows)


def test_ablate_rows(tmp_path):
    assert dispatch(["ablate", *FAST, "--mode", "no-pretrain|imagenet-free|full", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "ablation.csv")
    assert [r["mode"] for r in rows] == ["no-pretrain", "imagenet-free", "full"]
    assert {"hter_domain0", "auc_domain0", "mean_hter", "mean_auc"} <= set(rows[0])


def test_ablate_external_checkpoint(tmp_path):
    pre = tmp_path / "pre"
    assert dispatch(["pretrain", *FAST, "--out", str(pre)]) == 0
    out = tmp_path / "abl"
    argv = ["ablate", *FAST, "--mode", "imagenet-free", "--external-checkpoint", str(pre / "checkpoint"), "--out", str(out)]
    assert dispatch(argv) == 0
    assert len(_rows(out / "ablation.csv")) == 1


def test_visualize_outputs(tmp_path):
    argv = ["visualize", *FAST, "--num-images", "3", "--perplexity", "5", "--tsne-iters", "100", "--out", str(tmp_path)]
    assert dispatch(argv) == 0
    for name in ("reconstructions.png", "attention.png", "tsne.png", "tsne.csv"):
        assert (tmp_path / name).is_file(), name
    assert len(_rows(tmp_path / "tsne.csv")) == 24


def test_visualize_needs_decoder(tmp_path):
    pre = tmp_path / "pre"
    assert dispatch(["pretrain", *FAST, "--keep-decoder", "false", "--out", str(pre)]) == 0
    argv = ["visualize", *FAST, "--checkpoint", str(pre / "checkpoint"), "--kind", "recon", "--out", str(tmp_path / "v")]
    assert dispatch(argv) == 1


@pytest.mark.parametrize(
    "command,flag,values,csv_name,keys",
    [
        ("sweep-mask-ratio", "--ratios", "0.75,0.85", "sweep_mask_ratio.csv", [("0.75",), ("0.85",)]),
        ("sweep-decoder", "--decoders", "64x2,512x8", "sweep_decoder.csv", [("64", "2"), ("512", "8")]),
    ],
)
def test_sweeps_small(tmp_path, command, flag, values, csv_name, keys):
    assert dispatch([command, *FAST, flag, values, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / csv_name)
    got = [tuple(v for k, v in r.items() if k in ("mask_ratio", "decoder_width", "decoder_depth")) for r in rows]
    assert got == keys
