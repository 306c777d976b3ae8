"""Command-line entry point: ``mcae <command> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import re
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import __version__
from .analysis import theory
from .analysis.tsne import tsne_embed
from .analysis.visualize import (
    attention_map,
    heatmap_overlay,
    image_grid,
    plot_embedding,
    render_reconstructions,
    save_png,
    write_embedding_csv,
)
from .checkpoint import CheckpointError, checkpoint_groups, load_checkpoint
from .config import (
    ConfigError,
    ContrastiveConfig,
    DecoderConfig,
    EncoderConfig,
    FinetuneConfig,
    RunConfig,
    ScheduleConfig,
    load_run_config,
    micro_config,
)
from .data import (
    MOIRE_STRENGTH,
    DomainDataset,
    list_domains,
    load_domains,
    make_synthetic_domains,
    relabel_domains,
    save_domain_dir,
)
from .evaluate import (
    DEFAULT_POLICY,
    THRESHOLD_POLICIES,
    ProtocolResult,
    run_limited_source,
    run_loo_protocol,
    write_results,
)
from .model import aggregate, as_tensor
from .trainer import TrainingError, finetune, pretrain, train_accuracy

logger = logging.getLogger("mcae")

COMMANDS = (
    "synth-data",
    "pretrain",
    "finetune",
    "eval-loo",
    "eval-limited",
    "sweep-mask-ratio",
    "sweep-decoder",
    "ablate",
    "visualize",
    "verify-theory",
)
ABLATION_MODES = ("no-pretrain", "imagenet-free", "full", "no-contrastive", "no-lambda")
DEFAULT_ABLATIONS = "no-pretrain,imagenet-free,full"
DEFAULT_RATIOS = "0.55,0.65,0.75,0.85,0.95"
DEFAULT_DECODERS = "48x1,192x2,384x4,512x8,768x10"

_ENC, _DEC, _CON, _SCH, _FT = EncoderConfig(), DecoderConfig(), ContrastiveConfig(), ScheduleConfig(), FinetuneConfig()

# flag -> (config key, type, default shown in --help)
RUN_FLAGS: dict[str, tuple[str, Callable, object]] = {
    "--image-size": ("encoder.image_size", int, _ENC.image_size),
    "--patch-size": ("encoder.patch_size", int, _ENC.patch_size),
    "--embed-dim": ("encoder.embed_dim", int, _ENC.embed_dim),
    "--depth": ("encoder.depth", int, _ENC.depth),
    "--heads": ("encoder.heads", int, _ENC.heads),
    "--decoder-width": ("decoder.width", int, _DEC.width),
    "--decoder-depth": ("decoder.depth", int, _DEC.depth),
    "--decoder-heads": ("decoder.heads", int, _DEC.heads),
    "--tau": ("contrastive.temperature", float, _CON.temperature),
    "--lambda-cross": ("contrastive.lambda_live_cross", float, _CON.lambda_live_cross),
    "--lambda-same": ("contrastive.lambda_live_same", float, _CON.lambda_live_same),
    "--lambda-spoof": ("contrastive.lambda_spoof", float, _CON.lambda_spoof),
    "--mask-ratio": ("schedule.mask_ratio", float, _SCH.mask_ratio),
    "--beta": ("schedule.beta", float, _SCH.beta),
    "--epsilon": ("schedule.epsilon", float, _SCH.epsilon),
    "--switch-epoch": ("schedule.switch_epoch", int, "half of --epochs"),
    "--gate-mode": ("schedule.gate_mode", str, _SCH.gate_mode),
    "--epochs": ("schedule.total_epochs", int, _SCH.total_epochs),
    "--batch-size": ("schedule.batch_size", int, _SCH.batch_size),
    "--lr": ("schedule.learning_rate", float, _SCH.learning_rate),
    "--weight-decay": ("schedule.weight_decay", float, _SCH.weight_decay),
    "--warmup-epochs": ("schedule.warmup_epochs", int, _SCH.warmup_epochs),
    "--dtype": ("schedule.dtype", str, _SCH.dtype),
    "--finetune-epochs": ("finetune.epochs", int, _FT.epochs),
    "--finetune-batch-size": ("finetune.batch_size", int, _FT.batch_size),
    "--finetune-lr": ("finetune.learning_rate", float, _FT.learning_rate),
    "--crop-scale-lo": ("finetune.crop_scale_lo", float, _FT.crop_scale_lo),
}


class ArgumentError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401 - argparse hook
        raise ArgumentError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="key=value config file; explicit flags override it")
    g.add_argument(
        "--preset",
        choices=("base", "micro"),
        default=None,
        help="base configuration before --config and flags (default: base)",
    )
    g.add_argument("--seed", type=int, default=None, help=f"random seed (default: {_SCH.seed})")
    for flag, (key, typ, default) in RUN_FLAGS.items():
        kwargs = {"type": typ, "default": None, "help": f"{key} (default: {default})"}
        if flag == "--gate-mode":
            kwargs["choices"] = ("loss_threshold", "epoch", "either")
        if flag == "--dtype":
            kwargs["choices"] = ("float32", "float64")
        g.add_argument(flag, **kwargs)
    g.add_argument("--keep-decoder", choices=("true", "false"), default=None, help="store decoder tensors (default: true)")
    g.add_argument(
        "--no-spoof-positives",
        action="store_true",
        help="drop spoof-spoof positive pairs from the contrastive loss (default: included)",
    )
    g.add_argument("--head-only", action="store_true", help="freeze the encoder while fine-tuning (default: off)")
    g.add_argument("--parallel-folds", action="store_true", help="run protocol folds in worker processes (default: off)")
    g.add_argument(
        "--threshold-policy",
        choices=THRESHOLD_POLICIES,
        default=DEFAULT_POLICY,
        help=f"HTER threshold selection (default: {DEFAULT_POLICY})",
    )


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--out-dir",
        "--out",
        dest="out_dir",
        default=None,
        help="output directory (default: $MCAE_OUT_DIR or ./runs)",
    )


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="dataset root laid out as <root>/<domain>/{live,spoof}/*.png")
    g.add_argument("--domain-names", help="comma-separated subset/order of domains under --data")
    g.add_argument(
        "--synthetic-domains", type=int, default=4, help="domains to synthesize when --data is absent (default: 4)"
    )
    g.add_argument("--per-class", type=int, default=48, help="synthetic samples per class and domain (default: 48)")


def build_parser() -> Parser:
    parser = Parser(prog="mcae", description="Masked contrastive autoencoder pre-training for face anti-spoofing.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth-data", help="write synthetic domains in the dataset directory layout")
    p.add_argument("--domains", type=int, default=4, help="number of domains (default: 4)")
    p.add_argument("--per-class", type=int, default=50, help="images per class and domain (default: 50)")
    p.add_argument("--image-size", type=int, default=256, help="image side in pixels (default: 256)")
    p.add_argument(
        "--moire-strength", type=float, default=MOIRE_STRENGTH, help=f"spoof grating amplitude (default: {MOIRE_STRENGTH})"
    )
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    _add_out(p)

    for name, text in (
        ("pretrain", "two-stage masked contrastive pre-training"),
        ("finetune", "fine-tune a pre-trained encoder with a liveness head"),
        ("eval-loo", "leave-one-domain-out protocol"),
        ("eval-limited", "train on two source domains, test on the rest"),
        ("sweep-mask-ratio", "leave-one-out results per masking ratio"),
        ("sweep-decoder", "leave-one-out results per decoder width x depth"),
        ("ablate", "pre-training ablations"),
        ("visualize", "reconstructions, saliency maps and t-SNE of features"),
    ):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        _add_data(p)
        _add_out(p)
        if name == "finetune":
            p.add_argument("--checkpoint", required=True, help="pre-training checkpoint directory")
        if name == "eval-limited":
            p.add_argument("--sources", help="two comma-separated source domains (default: first two)")
            p.add_argument("--targets", help="comma-separated target domains (default: the others)")
        if name == "sweep-mask-ratio":
            p.add_argument("--ratios", default=DEFAULT_RATIOS, help=f"comma-separated ratios (default: {DEFAULT_RATIOS})")
        if name == "sweep-decoder":
            p.add_argument(
                "--decoders", default=DEFAULT_DECODERS, help=f"comma-separated WIDTHxDEPTH (default: {DEFAULT_DECODERS})"
            )
        if name == "ablate":
            p.add_argument(
                "--mode",
                default=DEFAULT_ABLATIONS,
                help=f"comma- or |-separated subset of {', '.join(ABLATION_MODES)} (default: {DEFAULT_ABLATIONS})",
            )
            p.add_argument(
                "--external-checkpoint",
                help="externally pre-trained encoder for the imagenet-free mode (default: random init, fine-tune only)",
            )
        if name == "visualize":
            p.add_argument("--checkpoint", help="checkpoint to visualize (default: pre-train one here)")
            p.add_argument("--kind", default="recon,attention,tsne", help="comma-separated outputs (default: all)")
            p.add_argument("--num-images", type=int, default=6, help="images per grid (default: 6)")
            p.add_argument("--perplexity", type=float, default=20.0, help="t-SNE perplexity (default: 20)")
            p.add_argument("--tsne-iters", type=int, default=500, help="t-SNE iterations (default: 500)")

    p = sub.add_parser("verify-theory", help="check the information-theoretic identities numerically")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--chains", type=int, default=100, help="random Markov chains to test (default: 100)")
    _add_out(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = micro_config() if args.preset == "micro" else RunConfig()
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = load_run_config(args.config)
    overrides = {}
    for flag, (key, _, _) in RUN_FLAGS.items():
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["schedule.seed"] = args.seed
        overrides["finetune.seed"] = args.seed
    if args.keep_decoder is not None:
        overrides["schedule.keep_decoder"] = args.keep_decoder == "true"
    if args.no_spoof_positives:
        overrides["contrastive.include_spoof_positives"] = False
    if args.head_only:
        overrides["finetune.head_only"] = True
    if "schedule.total_epochs" in overrides and "schedule.switch_epoch" not in overrides:
        # re-derive the default midpoint switch for the new epoch count
        if cfg.schedule.gate_mode != "loss_threshold":
            overrides["schedule.switch_epoch"] = overrides["schedule.total_epochs"] // 2
    try:
        return cfg.replace(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out_dir or os.environ.get("MCAE_OUT_DIR") or "runs")
    path.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(cfg: RunConfig, out: Path) -> None:
    text = cfg.to_manifest()
    print(text, end="")
    (out / "config.txt").write_text(text)


def load_data(args: argparse.Namespace, cfg: RunConfig) -> list[DomainDataset]:
    size = cfg.encoder.image_size
    if args.data:
        root = Path(args.data)
        if not root.is_dir():
            raise ConfigError(f"data directory not found: {root}")
        names = args.domain_names.split(",") if args.domain_names else list_domains(root)
        return load_domains(root, size, names)
    logger.info("no --data given: synthesizing %d domains", args.synthetic_domains)
    return make_synthetic_domains(args.synthetic_domains, args.per_class, size, cfg.schedule.seed)


def _by_name(domains: Sequence[DomainDataset], names: str) -> list[DomainDataset]:
    table = {d.domain_name: d for d in domains}
    missing = [n for n in names.split(",") if n not in table]
    if missing:
        raise ConfigError(f"unknown domain(s): {missing}")
    return [table[n] for n in names.split(",")]


def _loo(domains, cfg, args, **kw) -> list[ProtocolResult]:
    return run_loo_protocol(domains, cfg, parallel=args.parallel_folds, policy=args.threshold_policy, **kw)


def _write_sweep(path: Path, key_fields: Sequence[str], rows: list[tuple[tuple, list[ProtocolResult]]]) -> None:
    folds = [r.test_domain for r in rows[0][1]]
    header = list(key_fields)
    for f in folds:
        header += [f"hter_{f}", f"auc_{f}"]
    header += ["mean_hter", "mean_auc"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for key, results in rows:
            line = list(key)
            for r in results:
                line += [f"{r.hter:.4f}", f"{r.auc:.4f}"]
            line += [f"{np.mean([r.hter for r in results]):.4f}", f"{np.mean([r.auc for r in results]):.4f}"]
            w.writerow(line)


def cmd_synth_data(args) -> int:
    out = out_dir(args)
    domains = make_synthetic_domains(args.domains, args.per_class, args.image_size, args.seed, args.moire_strength)
    for d in domains:
        save_domain_dir(d, out)
    print(f"wrote {len(domains)} domains to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    domains = relabel_domains(load_data(args, cfg))
    result = pretrain(domains, cfg, out)
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_finetune(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    domains = relabel_domains(load_data(args, cfg))
    result = finetune(args.checkpoint, domains, cfg)
    from .checkpoint import save_checkpoint

    save_checkpoint(result.model, cfg, out / "finetuned", ("encoder", "head"))
    with open(out / "finetune_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_accuracy"])
        for i, (loss, acc) in enumerate(zip(result.losses, result.train_accuracy)):
            w.writerow([i, repr(loss), repr(acc)])
    print(f"final train accuracy {result.train_accuracy[-1]:.4f}")
    return 0


def cmd_eval_loo(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    results = _loo(load_data(args, cfg), cfg, args)
    write_results(results, out)
    print((out / "results_summary.txt").read_text(), end="")
    return 0


def cmd_eval_limited(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    domains = load_data(args, cfg)
    sources = _by_name(domains, args.sources) if args.sources else list(domains[:2])
    names = {d.domain_name for d in sources}
    targets = _by_name(domains, args.targets) if args.targets else [d for d in domains if d.domain_name not in names]
    results = run_limited_source(sources, targets, cfg, policy=args.threshold_policy)
    write_results(results, out)
    print((out / "results_summary.txt").read_text(), end="")
    return 0


def cmd_sweep_mask_ratio(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    try:
        ratios = [float(r) for r in args.ratios.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --ratios: {args.ratios}") from exc
    domains = load_data(args, cfg)
    rows = []
    for ratio in ratios:
        results = _loo(domains, cfg.replace(**{"schedule.mask_ratio": ratio}), args, protocol=f"mask_ratio={ratio}")
        rows.append(((ratio,), results))
        print(f"mask ratio {ratio}: mean AUC {np.mean([r.auc for r in results]):.2f}")
    _write_sweep(out / "sweep_mask_ratio.csv", ["mask_ratio"], rows)
    return 0


def cmd_sweep_decoder(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    specs = []
    for item in args.decoders.split(","):
        try:
            width, depth = (int(v) for v in item.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad decoder spec {item!r}, expected WIDTHxDEPTH") from exc
        specs.append((width, depth))
    domains = load_data(args, cfg)
    rows = []
    for width, depth in specs:
        heads = cfg.decoder.heads if width % cfg.decoder.heads == 0 else 1
        sub = cfg.replace(**{"decoder.width": width, "decoder.depth": depth, "decoder.heads": heads})
        results = _loo(domains, sub, args, protocol=f"decoder={width}x{depth}")
        rows.append(((width, depth), results))
        print(f"decoder {width}x{depth}: mean AUC {np.mean([r.auc for r in results]):.2f}")
    _write_sweep(out / "sweep_decoder.csv", ["decoder_width", "decoder_depth"], rows)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    echo_config(cfg, out)
    modes = re.split(r"[,|]", args.mode)
    bad = [m for m in modes if m not in ABLATION_MODES]
    if bad:
        raise ConfigError(f"unknown ablation mode(s) {bad}; choose from {ABLATION_MODES}")
    domains = load_data(args, cfg)
    rows = []
    for mode in modes:
        kw: dict = {"protocol": mode}
        sub = cfg
        if mode == "no-pretrain":
            kw["do_pretrain"] = False
        elif mode == "imagenet-free":
            # stands in for externally pre-trained weights; without them it is
            # random-init fine-tuning only
            if args.external_checkpoint:
                kw["init_model"] = load_checkpoint(args.external_checkpoint, parts=("encoder",))[0]
            else:
                kw["do_pretrain"] = False
        elif mode == "no-contrastive":
            sub = cfg.replace(**{"schedule.beta": 0.0})
        elif mode == "no-lambda":
            sub = cfg.replace(
                **{
                    "contrastive.lambda_live_cross": 1.0,
                    "contrastive.lambda_live_same": 1.0,
                    "contrastive.lambda_spoof": 1.0,
                }
            )
        results = _loo(domains, sub, args, **kw)
        rows.append(((mode,), results))
        print(f"{mode}: mean HTER {np.mean([r.hter for r in results]):.2f} AUC {np.mean([r.auc for r in results]):.2f}")
    _write_sweep(out / "ablation.csv", ["mode"], rows)
    return 0


def cmd_visualize(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    domains = relabel_domains(load_data(args, cfg))
    if args.checkpoint:
        model, cfg = load_checkpoint(args.checkpoint)
        has_decoder = "decoder" in checkpoint_groups(args.checkpoint)
    else:
        echo_config(cfg, out)
        model = pretrain(domains, cfg, out).model
        has_decoder = True
    kinds = set(args.kind.split(","))
    rng = np.random.default_rng(cfg.schedule.seed)
    pool = np.concatenate([d.images() for d in domains])
    pick = pool[rng.choice(len(pool), size=min(args.num_images, len(pool)), replace=False)]
    if "recon" in kinds:
        path, _ = render_reconstructions(
            model, pick, cfg.schedule.mask_ratio, out / "reconstructions.png", cfg.schedule.seed, has_decoder
        )
        print(f"wrote {path}")
    if "attention" in kinds:
        tuned = finetune(model, domains, cfg).model
        rows = []
        for img in pick:
            heat = attention_map(tuned, img, 1)
            hwc = img.transpose(1, 2, 0)
            rows.append([hwc, np.repeat(heat[..., None], 3, axis=2), heatmap_overlay(hwc, heat)])
        print(f"wrote {save_png(image_grid(rows), out / 'attention.png')}")
        print(f"fine-tuned train accuracy {train_accuracy(tuned, domains):.3f}")
    if "tsne" in kinds:
        feats, labels, doms = [], [], []
        model.eval()
        with torch.no_grad():
            for d in domains:
                feats.append(aggregate(model.features(as_tensor(d.images(), model))).double().numpy())
                labels.append(d.labels)
                doms.append(np.full(len(d), d.domain_id))
        cloud = tsne_embed(
            np.concatenate(feats),
            perplexity=args.perplexity,
            iters=args.tsne_iters,
            seed=cfg.schedule.seed,
            labels=np.concatenate(labels),
            domains=np.concatenate(doms),
        )
        print(f"wrote {write_embedding_csv(cloud, out / 'tsne.csv')}")
        print(f"wrote {plot_embedding(cloud, out / 'tsne.png')}")
    return 0


def cmd_verify_theory(args) -> int:
    out = out_dir(args)
    rows: list[tuple[str, str, float, float, bool]] = []

    def check(name: str, detail: str, value: float, expected: float, tol: float) -> None:
        rows.append((name, detail, value, expected, abs(value - expected) <= tol))

    indep = theory.DiscreteJoint(np.outer([0.3, 0.7], [0.6, 0.4]), ("X", "Y"))
    check("mi", "product distribution", theory.mutual_information(indep, ["X"], ["Y"]), 0.0, 1e-6)
    copy = theory.DiscreteJoint(np.array([[0.5, 0.0], [0.0, 0.5]]), ("X", "Y"))
    check("mi", "copy of a fair bit", theory.mutual_information(copy, ["X"], ["Y"]), 1.0, 1e-6)
    sym = theory.DiscreteJoint(np.array([[0.4, 0.1], [0.1, 0.4]]), ("X", "Y"))
    # 1 - H(0.2): a symmetric channel flipping a fair bit with probability 0.2
    exact = 1.0 + 0.2 * math.log2(0.2) + 0.8 * math.log2(0.8)
    check("mi", "[[0.4,0.1],[0.1,0.4]]", theory.mutual_information(sym, ["X"], ["Y"]), exact, 1e-6)

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.chains):
        rep = theory.verify_dpi_chain(theory.random_chain(rng))
        worst = max(worst, rep.i_ag - rep.i_tg)
    rows.append(("dpi", f"{args.chains} random chains, max I(A;G)-I(T;G)", worst, 0.0, worst <= 1e-10))

    for sigma in (0.5, 1.0, 2.0):
        x = rng.normal(size=(200, 8))
        mu = x + rng.normal(scale=rng.uniform(0.1, 2.0, size=(200, 1)), size=(200, 8))
        rep = theory.variational_mse_equivalence(x, mu, sigma)
        check("gaussian_bound", f"slope sigma={sigma}", rep.fitted_slope, -1 / (2 * sigma**2), 1e-9)

    path = out / "theory_report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "detail", "value", "expected", "pass"])
        for name, detail, value, expected, ok in rows:
            w.writerow([name, detail, repr(value), repr(expected), ok])
    for name, detail, value, expected, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:15s} {detail:45s} {value:.10g} (expected {expected:.10g})")
    return 0 if all(r[-1] for r in rows) else 2


HANDLERS = {
    "synth-data": cmd_synth_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval-loo": cmd_eval_loo,
    "eval-limited": cmd_eval_limited,
    "sweep-mask-ratio": cmd_sweep_mask_ratio,
    "sweep-decoder": cmd_sweep_decoder,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
    "verify-theory": cmd_verify_theory,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, TrainingError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

