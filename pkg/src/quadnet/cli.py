"""Command-line entry point: train, denoise, verify, study, gen-corpus.

Configuration is a flat key=value text file (one pair per line, ``#``
comments).  Every command that produces artifacts writes them atomically
(temp file + rename) together with a ``manifest.json`` capturing the fully
resolved configuration, so a run can be reproduced byte-identically.

Exit codes: 0 success, 1 property/runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (
    DISPLAY_WINDOW,
    add_noise,
    denormalize_hu,
    normalize_hu,
    patch_dataset,
    render_window,
    synth_phantom,
)
from .experiments import (
    CorpusSpec,
    SweepSpec,
    init_robustness_curves_csv,
    init_robustness_summary_csv,
    run_activation_study,
    run_efficiency_sweep,
    run_init_robustness,
    run_swap_study,
    swap_gap_csv,
)
from .metrics import evaluate
from .model import (
    CONVENTIONAL,
    QUADRATIC,
    QAEConfig,
    build_qae,
    count_params,
    forward,
    load,
)
from .neuron import IDENTITY, QuadraticParams, quad_conv_forward, quad_forward
from .polynet import FactoredPoly, build_polynet, eval_polynet, expected_depth
from .qimg import FormatError, encode_qimg, read_qimg, write_png16
from .tensor import PadMode, ShapeError, conv2d
from .training import TrainConfig, TrainingDiverged, grad_check, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

STUDIES = ("efficiency", "swap", "activation", "init-robustness")
VERIFY_SUBS = ("grad-check", "count-params", "xor", "polynet", "reduce-equiv")


class UsageError(Exception):
    """Bad arguments, unreadable config, or missing input paths."""


# --- config files -----------------------------------------------------------

def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; blank lines ok."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', "
                             f"got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        if key in out:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def coerce(defaults: dict, overrides: dict) -> dict:
    """Overlay string overrides on typed defaults, coercing per default type."""
    out = dict(defaults)
    for key, raw in overrides.items():
        if key not in defaults:
            raise UsageError(f"unknown config key {key!r}; valid keys: "
                             + ", ".join(sorted(defaults)))
        ref = defaults[key]
        try:
            if isinstance(ref, bool):
                out[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(ref, int):
                out[key] = int(raw)
            elif isinstance(ref, float):
                out[key] = float(raw)
            elif isinstance(ref, tuple):
                out[key] = tuple(type(ref[0])(v) for v in raw.split(","))
            else:
                out[key] = raw
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {raw!r}")
    return out


# --- artifact plumbing ------------------------------------------------------

def atomic_write_bytes(path, data: bytes):
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_manifest(out_dir, command, config, seed, inputs, outputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "version": __version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def ensure_out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def say(args, *message):
    if not args.quiet:
        print(*message)


# --- gen-corpus ---------------------------------------------------------------

GEN_CORPUS_DEFAULTS = {
    "n_images": 12,
    "size": 128,
    "sigma_gauss": 25.0,
    "dose_factor": 4.0,
    "seed": 0,
}


def cmd_gen_corpus(args) -> int:
    cfg = coerce(GEN_CORPUS_DEFAULTS, load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = ensure_out_dir(args.out_dir)
    outputs = []
    for i in range(cfg["n_images"]):
        image_seed = cfg["seed"] * 100003 + i
        clean = synth_phantom(seed=image_seed, size=cfg["size"])
        noisy = add_noise(clean, cfg["sigma_gauss"], cfg["dose_factor"],
                          seed=image_seed)
        for name, img in (("clean", clean), ("noisy", noisy)):
            path = os.path.join(out_dir, f"{name}_{i:03d}.qimg")
            atomic_write_bytes(path, encode_qimg(img))
            outputs.append(path)
    write_manifest(out_dir, "gen-corpus", cfg, cfg["seed"], [], outputs)
    say(args, f"wrote {cfg['n_images']} image pairs to {out_dir}")
    return EXIT_OK


def read_corpus_dir(path):
    """Sorted (noisy, clean) HU image pairs from a gen-corpus directory."""
    if not os.path.isdir(path):
        raise UsageError(f"corpus directory not found: {path}")
    names = sorted(n for n in os.listdir(path)
                   if n.startswith("clean_") and n.endswith(".qimg"))
    pairs = []
    for clean_name in names:
        noisy_name = clean_name.replace("clean_", "noisy_", 1)
        noisy_path = os.path.join(path, noisy_name)
        if not os.path.isfile(noisy_path):
            raise UsageError(f"corpus pair incomplete: missing {noisy_path}")
        pairs.append((read_qimg(noisy_path),
                      read_qimg(os.path.join(path, clean_name))))
    if not pairs:
        raise UsageError(f"no clean_*.qimg images in corpus directory {path}")
    return pairs


# --- train --------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "channels": 15,
    "kernel": 3,
    "neuron": "quadratic",
    "epochs": 30,
    "batch_size": 50,
    "lr_early": 4e-4,
    "lr_late": 2e-4,
    "lr_switch_epoch": 10,     # last epoch at lr_early
    "patch": 64,
    "per_image": 200,
    "val_images": 2,           # images reserved from the end for validation
    "w_b_const": 0.0,
    "seed": 0,
}


def lr_schedule(epochs, early, late, switch):
    if epochs <= switch:
        return ((1, epochs, early),)
    return ((1, switch, early), (switch + 1, epochs, late))


def cmd_train(args) -> int:
    cfg = coerce(TRAIN_DEFAULTS, load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.channels is not None:
        cfg["channels"] = args.channels
    if cfg["neuron"] not in (QUADRATIC, CONVENTIONAL):
        raise UsageError(f"neuron must be quadratic or conventional, "
                         f"got {cfg['neuron']!r}")
    pairs = read_corpus_dir(args.corpus_dir)
    if len(pairs) <= cfg["val_images"]:
        raise UsageError(f"corpus has {len(pairs)} images but val_images="
                         f"{cfg['val_images']} leaves nothing to train on")
    n_val = cfg["val_images"]
    train_pairs = pairs[:len(pairs) - n_val]
    val_pairs = pairs[len(pairs) - n_val:]
    tr = patch_dataset(train_pairs, cfg["patch"], cfg["per_image"],
                       seed=cfg["seed"])
    va = patch_dataset(val_pairs, cfg["patch"], cfg["per_image"],
                       seed=cfg["seed"] + 1)
    tr = (tr[0].astype(np.float32), tr[1].astype(np.float32))
    va = (va[0].astype(np.float32), va[1].astype(np.float32))

    model_cfg = QAEConfig(channels=cfg["channels"], kernel=cfg["kernel"],
                          neuron=cfg["neuron"])
    model = build_qae(model_cfg, seed=cfg["seed"], w_b_const=cfg["w_b_const"])
    say(args, f"training {cfg['neuron']} model, width {cfg['channels']}, "
              f"{count_params(model)} parameters, {len(tr[0])} patches")
    tcfg = TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        lr_schedule=lr_schedule(cfg["epochs"], cfg["lr_early"],
                                cfg["lr_late"], cfg["lr_switch_epoch"]),
        seed=cfg["seed"])
    try:
        result = train(model, tr, va, tcfg)
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_FAILURE

    out_dir = ensure_out_dir(args.out_dir)
    ckpt_path = os.path.join(out_dir, "checkpoint.qae")
    hist_path = os.path.join(out_dir, "history.csv")
    fig_path = os.path.join(out_dir, "history.png")
    atomic_write_bytes(ckpt_path, result.best_checkpoint)
    atomic_write_text(hist_path, result.history_csv())
    from .plots import plot_history
    plot_history(result.history, fig_path)
    write_manifest(out_dir, "train", cfg, cfg["seed"], [args.corpus_dir],
                   [ckpt_path, hist_path, fig_path])
    say(args, f"best epoch {result.best_epoch}, "
              f"val loss {result.history[result.best_epoch - 1][2]:.8g}")
    say(args, f"artifacts in {out_dir}")
    return EXIT_OK


# --- denoise --------------------------------------------------------------------

def cmd_denoise(args) -> int:
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not os.path.isfile(args.input):
        raise UsageError(f"input image not found: {args.input}")
    lo, hi = args.window
    if lo >= hi:
        raise UsageError(f"display window lo must be below hi, got [{lo}, {hi}]")
    try:
        model = load(args.checkpoint)
        hu = read_qimg(args.input)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    normalized = normalize_hu(hu)
    try:
        denoised = forward(model, normalized.astype(np.float32))
    except ShapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    denoised = np.clip(denoised, 0.0, 1.0)
    denoised_hu = denormalize_hu(denoised)

    out_dir = ensure_out_dir(args.out_dir)
    qimg_path = os.path.join(out_dir, "denoised.qimg")
    atomic_write_bytes(qimg_path, encode_qimg(denoised_hu))
    outputs = [qimg_path]
    if args.png:
        png_path = os.path.join(out_dir, "denoised.png")
        write_png16(png_path, render_window(denoised_hu, lo, hi))
        outputs.append(png_path)
    inputs = [args.checkpoint, args.input]
    if args.reference is not None:
        if not os.path.isfile(args.reference):
            raise UsageError(f"reference image not found: {args.reference}")
        ref = normalize_hu(read_qimg(args.reference))
        report = evaluate(denoised, ref)
        csv = "name,psnr,ssim,rmse\n" + report.csv_row("denoised") + "\n"
        metrics_path = os.path.join(out_dir, "metrics.csv")
        atomic_write_text(metrics_path, csv)
        outputs.append(metrics_path)
        inputs.append(args.reference)
        say(args, csv.strip())
    config = {"window_lo": lo, "window_hi": hi, "png": bool(args.png)}
    write_manifest(out_dir, "denoise", config, 0, inputs, outputs)
    say(args, f"artifacts in {out_dir}")
    return EXIT_OK


# --- verify ---------------------------------------------------------------------

def _report(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def verify_count_params() -> bool:
    expected = {8: 14475, 15: 49818, 32: 223779, 48: 501555}
    ok = True
    for width, want in sorted(expected.items()):
        model = build_qae(QAEConfig(channels=width), init="zero")
        got = count_params(model)
        ok &= _report(f"count-params width {width}", got == want,
                      f"got {got}, expected {want}")
    return ok


def verify_xor() -> bool:
    p = QuadraticParams(w_r=np.array([1.0, 1.0]), w_g=np.array([-2.0, 0.0]),
                        w_b=np.array([3.0, 1.0]), b_r=0.0, b_g=0.0, c=0.0)
    truth = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 0}
    ok = True
    for (a, b), want in sorted(truth.items()):
        got = quad_forward(np.array([a, b], dtype=float), p, IDENTITY)
        ok &= _report(f"xor ({a},{b})", got == want, f"got {got}, expected {want}")
    return ok


def verify_grad_check() -> bool:
    model = build_qae(QAEConfig(channels=2, activation=IDENTITY), seed=0)
    probe = np.random.default_rng(0).normal(0.0, 0.5, size=(1, 8, 8))
    err = grad_check(model, probe, step=1e-5, sample=20, seed=0)
    return _report("grad-check Q-AE(2) identity", err < 1e-5,
                   f"max relative error {err:.3g} < 1e-5")


def verify_reduce_equiv() -> bool:
    rng = np.random.default_rng(1)
    ok = True
    for pad in (PadMode.SAME, PadMode.VALID):
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        x = rng.normal(size=(2, 8, 8))
        p = QuadraticParams(w_r=w, w_g=np.zeros_like(w), w_b=np.zeros_like(w),
                            b_r=b, b_g=np.ones(3), c=np.zeros(3))
        quad = quad_conv_forward(x, p, pad=pad, act=IDENTITY)
        conv = conv2d(x, w, b, pad=pad)
        diff = float(np.max(np.abs(quad - conv)))
        ok &= _report(f"reduce-equiv {pad.value}", diff <= 1e-12,
                      f"max abs diff {diff:.3g} <= 1e-12")
    return ok


def verify_polynet() -> bool:
    rng = np.random.default_rng(2)
    ok = True
    for trial in range(10):
        n_lin = int(rng.integers(0, 4))
        n_quad = int(rng.integers(0 if n_lin else 1, 4))
        poly = FactoredPoly(
            scale=float(rng.uniform(-2, 2)),
            linear=tuple(float(v) for v in rng.uniform(-1, 1, size=n_lin)),
            quadratic=tuple((float(a), float(b)) for a, b in
                            rng.uniform(-1, 1, size=(n_quad, 2))))
        net = build_polynet(poly)
        xs = np.linspace(-1.0, 1.0, 21)
        want = poly.evaluate(xs)
        got = np.array([eval_polynet(net, x) for x in xs])
        rel = float(np.max(np.abs(got - want) / (1.0 + np.abs(want))))
        n_factors = len(poly.linear) + len(poly.quadratic)
        depth_ok = net.depth <= expected_depth(n_factors)
        ok &= _report(f"polynet trial {trial}", rel < 1e-8 and depth_ok,
                      f"rel err {rel:.3g} < 1e-8, depth {net.depth} <= "
                      f"{expected_depth(n_factors)}")
    return ok


def cmd_verify(args) -> int:
    dispatch = {
        "grad-check": verify_grad_check,
        "count-params": verify_count_params,
        "xor": verify_xor,
        "polynet": verify_polynet,
        "reduce-equiv": verify_reduce_equiv,
    }
    ok = dispatch[args.subcommand]()
    return EXIT_OK if ok else EXIT_FAILURE


# --- study ----------------------------------------------------------------------

STUDY_DEFAULTS = {
    "widths": (8, 15, 32, 48),
    "repeats": 1,
    "epochs": 4,
    "batch_size": 50,
    "width": 15,               # activation study
    "seed": 0,
    "n_images": 8,
    "image_size": 128,
    "patch": 32,
    "per_image": 60,
    "train_images": 5,
    "val_images": 2,
    "sigma_gauss": 25.0,
    "dose_factor": 4.0,
}


def _corpus_spec(cfg) -> CorpusSpec:
    return CorpusSpec(n_images=cfg["n_images"], image_size=cfg["image_size"],
                      patch=cfg["patch"], per_image=cfg["per_image"],
                      train_images=cfg["train_images"],
                      val_images=cfg["val_images"],
                      sigma_gauss=cfg["sigma_gauss"],
                      dose_factor=cfg["dose_factor"], seed=cfg["seed"])


def cmd_study(args) -> int:
    cfg = coerce(STUDY_DEFAULTS, load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    corpus = _corpus_spec(cfg)
    seeds = tuple(cfg["seed"] + r for r in range(cfg["repeats"]))
    out_dir = ensure_out_dir(args.out_dir)
    from .plots import plot_curves, plot_efficiency, plot_init_robustness
    outputs = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        atomic_write_text(path, text)
        outputs.append(path)
        return path

    if args.name == "efficiency":
        spec = SweepSpec(widths=cfg["widths"], kinds=("quadratic",),
                         repeats=cfg["repeats"], epochs=cfg["epochs"],
                         batch_size=cfg["batch_size"], seed=cfg["seed"],
                         corpus=corpus)
        result = run_efficiency_sweep(spec)
        emit("sweep.csv", result.sweep_csv())
        emit("curves.csv", result.curves_csv())
        fig = os.path.join(out_dir, "efficiency.png")
        plot_efficiency(result.records, fig)
        outputs.append(fig)
    elif args.name == "swap":
        result = run_swap_study(widths=cfg["widths"], seeds=seeds,
                                epochs=cfg["epochs"],
                                batch_size=cfg["batch_size"],
                                corpus_spec=corpus)
        emit("sweep.csv", result.sweep_csv())
        emit("curves.csv", result.curves_csv())
        emit("swap_gap.csv", swap_gap_csv(result))
        fig = os.path.join(out_dir, "swap_curves.png")
        plot_curves(result.records, fig, title="Q-AE vs AE validation loss")
        outputs.append(fig)
    elif args.name == "activation":
        result = run_activation_study(width=cfg["width"], seeds=seeds,
                                      epochs=cfg["epochs"],
                                      batch_size=cfg["batch_size"],
                                      corpus_spec=corpus)
        emit("sweep.csv", result.sweep_csv())
        emit("curves.csv", result.curves_csv())
        fig = os.path.join(out_dir, "activation_curves.png")
        plot_curves(result.records, fig, title="Activation-variant convergence")
        outputs.append(fig)
    else:  # init-robustness
        rows, finals = run_init_robustness(repeats=cfg["repeats"],
                                           width=cfg["widths"][0],
                                           epochs=cfg["epochs"],
                                           batch_size=cfg["batch_size"],
                                           seed=cfg["seed"],
                                           corpus_spec=corpus)
        emit("trajectories.csv", init_robustness_curves_csv(rows))
        emit("summary.csv", init_robustness_summary_csv(finals))
        fig = os.path.join(out_dir, "init_robustness.png")
        plot_init_robustness(rows, fig)
        outputs.append(fig)

    write_manifest(out_dir, f"study {args.name}", cfg, cfg["seed"], [], outputs)
    say(args, f"artifacts in {out_dir}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadnet",
        description="Quadratic-neuron autoencoder: training, denoising, "
                    "verification demos, and experiment studies.")
    parser.add_argument("--version", action="version",
                        version=f"quadnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir_default):
        p.add_argument("--seed", type=int, default=None,
                       help="root random seed (overrides config)")
        p.add_argument("--config", default=None,
                       help="flat key=value config file")
        p.add_argument("--out-dir", default=out_dir_default,
                       help="directory for output artifacts")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")

    p = sub.add_parser("gen-corpus", help="generate a synthetic QIMG corpus")
    common(p, "corpus")

    p = sub.add_parser("train", help="train a model on a QIMG corpus")
    common(p, "run")
    p.add_argument("--corpus-dir", required=True,
                   help="directory produced by gen-corpus")
    p.add_argument("--channels", type=int, default=None,
                   help="hidden channel width (overrides config)")

    p = sub.add_parser("denoise", help="run a checkpoint on one image")
    common(p, "denoise-out")
    p.add_argument("--checkpoint", required=True, help="QAE1 checkpoint path")
    p.add_argument("--input", required=True, help="input QIMG image (HU)")
    p.add_argument("--reference", default=None,
                   help="clean QIMG reference for metrics")
    p.add_argument("--png", action="store_true",
                   help="also write a windowed 16-bit PNG")
    p.add_argument("--window", type=float, nargs=2, default=DISPLAY_WINDOW,
                   metavar=("LO", "HI"), help="display window in HU")

    p = sub.add_parser("verify", help="run a self-contained property suite")
    common(p, ".")
    p.add_argument("subcommand", choices=VERIFY_SUBS)

    p = sub.add_parser("study", help="run an experiment study")
    common(p, None)
    p.add_argument("name", choices=STUDIES)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "study" and args.out_dir is None:
        args.out_dir = f"study-{args.name}"
    dispatch = {
        "gen-corpus": cmd_gen_corpus,
        "train": cmd_train,
        "denoise": cmd_denoise,
        "verify": cmd_verify,
        "study": cmd_study,
    }
    try:
        return dispatch[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
