"""Desk-scale reproductions of the four studies: the efficiency sweep, the
quadratic-vs-conventional swap, the quadratic-activation comparison, and the
initialization-robustness study.

All studies run on the synthetic phantom corpus, so absolute metric values
are not comparable to any published clinical numbers; outputs assert shapes,
orderings and determinism instead.  Diverged runs are recorded with the
``diverged`` sentinel rather than retried or dropped.

CSV schemas:
    sweep rows:  kind,width,seed,params,log10_params,final_val_loss,psnr,ssim,rmse
    curve rows:  kind,width,seed,epoch,val_loss
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data import make_corpus, normalize_hu, patch_dataset
from .metrics import evaluate
from .model import (
    CONVENTIONAL,
    QUADRATIC,
    QAEConfig,
    QAEModel,
    build_qae,
    count_params,
    deserialize,
    forward,
)
from .neuron import quadratic_activation, rectified_quadratic_activation
from .training import TrainConfig, TrainingDiverged, train

DIVERGED = "diverged"

# study kinds: quadratic neurons, conventional neurons, and the two
# quadratic-activation baselines (conventional neurons, x^2-style activation)
KINDS = ("quadratic", "conventional", "quadratic_activation",
         "rectified_quadratic_activation")

# per-kind learning rates; the quadratic model follows the two-stage
# schedule (4e-4 then 2e-4 after epoch 10) and the others use a flat rate
KIND_LEARNING_RATES = {
    "conventional": 5e-4,
    "quadratic_activation": 5e-5,
    "rectified_quadratic_activation": 5e-4,
}


@dataclass(frozen=True)
class CorpusSpec:
    """Synthetic corpus descriptor: images, split sizes, patching, noise."""

    n_images: int = 8
    image_size: int = 128
    patch: int = 32
    per_image: int = 60
    train_images: int = 5
    val_images: int = 2        # remaining images are the held-out eval set
    sigma_gauss: float = 25.0
    dose_factor: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.train_images + self.val_images >= self.n_images:
            raise ValueError("corpus leaves no held-out images")


def build_corpus(spec: CorpusSpec):
    """(train arrays, val arrays, held-out image pairs), all normalized."""
    pairs = make_corpus(spec.n_images, spec.image_size, spec.seed,
                        spec.sigma_gauss, spec.dose_factor)
    n_tr, n_val = spec.train_images, spec.val_images
    tr_n, tr_c = patch_dataset(pairs[:n_tr], spec.patch, spec.per_image,
                               seed=spec.seed)
    va_n, va_c = patch_dataset(pairs[n_tr:n_tr + n_val], spec.patch,
                               spec.per_image, seed=spec.seed + 1)
    held = [(normalize_hu(noisy), normalize_hu(clean))
            for noisy, clean in pairs[n_tr + n_val:]]
    as32 = lambda a: a.astype(np.float32)
    return (as32(tr_n), as32(tr_c)), (as32(va_n), as32(va_c)), held


def kind_config(kind: str, width: int, kernel: int = 3) -> QAEConfig:
    if kind == "quadratic":
        return QAEConfig(channels=width, kernel=kernel, neuron=QUADRATIC)
    if kind == "conventional":
        return QAEConfig(channels=width, kernel=kernel, neuron=CONVENTIONAL)
    if kind == "quadratic_activation":
        return QAEConfig(channels=width, kernel=kernel, neuron=CONVENTIONAL,
                         activation=quadratic_activation(0.4))
    if kind == "rectified_quadratic_activation":
        return QAEConfig(channels=width, kernel=kernel, neuron=CONVENTIONAL,
                         activation=rectified_quadratic_activation(0.4))
    raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")


def kind_schedule(kind: str, epochs: int):
    if kind == "quadratic":
        if epochs <= 10:
            return ((1, epochs, 4e-4),)
        return ((1, 10, 4e-4), (11, epochs, 2e-4))
    return ((1, epochs, KIND_LEARNING_RATES[kind]),)


def held_out_metrics(model: QAEModel, held_pairs):
    """Mean PSNR/SSIM/RMSE of the model output over held-out image pairs."""
    reports = []
    for noisy, clean in held_pairs:
        denoised = np.clip(forward(model, np.asarray(noisy, dtype=np.float32)),
                           0.0, 1.0)
        reports.append(evaluate(denoised, clean))
    return (float(np.mean([r.psnr for r in reports])),
            float(np.mean([r.ssim for r in reports])),
            float(np.mean([r.rmse for r in reports])))


@dataclass
class RunRecord:
    kind: str
    width: int
    seed: int
    params: int
    final_val_loss: float | str      # DIVERGED sentinel on non-finite loss
    psnr: float | str
    ssim: float | str
    rmse: float | str
    curve: tuple = ()                # (epoch, val_loss) pairs

    @property
    def diverged(self) -> bool:
        return self.final_val_loss == DIVERGED


def run_one(kind: str, width: int, seed: int, corpus, epochs: int,
            batch_size: int = 50, w_b_const: float = 0.0) -> RunRecord:
    """Train one (kind, width, seed) configuration and evaluate it."""
    (tr, va, held) = corpus
    cfg = kind_config(kind, width)
    model = build_qae(cfg, seed=seed, w_b_const=w_b_const)
    params = count_params(model)
    tcfg = TrainConfig(batch_size=batch_size, epochs=epochs,
                       lr_schedule=kind_schedule(kind, epochs), seed=seed)
    try:
        result = train(model, tr, va, tcfg)
    except TrainingDiverged:
        return RunRecord(kind, width, seed, params, DIVERGED,
                         DIVERGED, DIVERGED, DIVERGED)
    best = deserialize(result.best_checkpoint, activation=cfg.activation)
    psnr, ssim, rmse = held_out_metrics(best, held)
    curve = tuple((epoch, val) for epoch, _, val in result.history)
    return RunRecord(kind, width, seed, params,
                     result.history[-1][2], psnr, ssim, rmse, curve)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, float):
        return f"{v:.8g}"
    return str(v)


def sweep_csv(records) -> str:
    buf = io.StringIO()
    buf.write("kind,width,seed,params,log10_params,final_val_loss,psnr,ssim,rmse\n")
    for r in sorted(records, key=lambda r: (r.kind, r.width, r.seed)):
        log10 = f"{math.log10(r.params):.8g}"
        buf.write(",".join([r.kind, str(r.width), str(r.seed), str(r.params),
                            log10, _fmt(r.final_val_loss), _fmt(r.psnr),
                            _fmt(r.ssim), _fmt(r.rmse)]) + "\n")
    return buf.getvalue()


def curves_csv(records) -> str:
    buf = io.StringIO()
    buf.write("kind,width,seed,epoch,val_loss\n")
    for r in sorted(records, key=lambda r: (r.kind, r.width, r.seed)):
        for epoch, val in r.curve:
            buf.write(f"{r.kind},{r.width},{r.seed},{epoch},{_fmt(val)}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class SweepSpec:
    widths: tuple = (8, 15, 32, 48)
    kinds: tuple = ("quadratic",)
    repeats: int = 1
    epochs: int = 4
    batch_size: int = 50
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=CorpusSpec)

    def __post_init__(self):
        if not self.widths:
            raise ValueError("widths must be nonempty")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for kind in self.kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown kind {kind!r}")


@dataclass
class SweepResult:
    records: list

    def sweep_csv(self) -> str:
        return sweep_csv(self.records)

    def curves_csv(self) -> str:
        return curves_csv(self.records)


def run_efficiency_sweep(spec: SweepSpec) -> SweepResult:
    """Train every (kind, width, seed) triple on one shared corpus."""
    corpus = build_corpus(spec.corpus)
    records = []
    for kind in spec.kinds:
        for width in spec.widths:
            for rep in range(spec.repeats):
                records.append(run_one(kind, width, spec.seed + rep, corpus,
                                       spec.epochs, spec.batch_size))
    return SweepResult(records=records)


def run_swap_study(widths=(8, 15), seeds=(0,), epochs=4, batch_size=50,
                   corpus_spec: CorpusSpec | None = None) -> SweepResult:
    """Q-AE(n) vs AE(n) under identical conditions except learning rate."""
    corpus = build_corpus(corpus_spec or CorpusSpec())
    records = []
    for kind in ("quadratic", "conventional"):
        for width in widths:
            for seed in seeds:
                records.append(run_one(kind, width, seed, corpus,
                                       epochs, batch_size))
    return SweepResult(records=records)


def swap_gap_csv(result: SweepResult) -> str:
    """Relative held-out RMSE gap of Q-AE(n) vs AE(n), mean over seeds."""
    by_kind_width = {}
    for r in result.records:
        if r.diverged:
            continue
        by_kind_width.setdefault((r.kind, r.width), []).append(r.rmse)
    buf = io.StringIO()
    buf.write("width,params_quadratic,params_conventional,"
              "rmse_quadratic,rmse_conventional,relative_gap\n")
    widths = sorted({w for (_, w) in by_kind_width})
    for width in widths:
        q = by_kind_width.get(("quadratic", width))
        c = by_kind_width.get(("conventional", width))
        if not q or not c:
            continue
        rmse_q, rmse_c = float(np.mean(q)), float(np.mean(c))
        p_q = next(r.params for r in result.records
                   if r.kind == "quadratic" and r.width == width)
        p_c = next(r.params for r in result.records
                   if r.kind == "conventional" and r.width == width)
        gap = (rmse_q - rmse_c) / rmse_c
        buf.write(f"{width},{p_q},{p_c},{_fmt(rmse_q)},{_fmt(rmse_c)},"
                  f"{_fmt(gap)}\n")
    return buf.getvalue()


def run_activation_study(width=15, alpha=0.4, seeds=(0,), epochs=4,
                         batch_size=50,
                         corpus_spec: CorpusSpec | None = None) -> SweepResult:
    """Q-AE vs AE(QA) vs AE(RQA) with the per-model learning rates."""
    if alpha != 0.4:
        raise ValueError("the study is specified at alpha = 0.4")
    corpus = build_corpus(corpus_spec or CorpusSpec())
    records = []
    for kind in ("quadratic", "quadratic_activation",
                 "rectified_quadratic_activation"):
        for seed in seeds:
            records.append(run_one(kind, width, seed, corpus,
                                   epochs, batch_size))
    return SweepResult(records=records)


def run_init_robustness(w_b_consts=(0.0, 0.001, 0.003), repeats=5, width=8,
                        epochs=4, batch_size=50, seed=0,
                        corpus_spec: CorpusSpec | None = None):
    """Scratch-init Q-AE loss trajectories per w_b constant, repeated."""
    corpus = build_corpus(corpus_spec or CorpusSpec())
    rows = []   # (w_b_const, repeat, epoch, val_loss)
    finals = {}
    for w_b in w_b_consts:
        for rep in range(repeats):
            run_seed = seed + rep
            record = run_one("quadratic", width, run_seed, corpus, epochs,
                             batch_size, w_b_const=w_b)
            if record.diverged:
                rows.append((w_b, rep, 0, DIVERGED))
                finals.setdefault(w_b, []).append(math.nan)
                continue
            for epoch, val in record.curve:
                rows.append((w_b, rep, epoch, val))
            finals.setdefault(w_b, []).append(record.curve[-1][1])
    return rows, finals


def init_robustness_curves_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("w_b_const,repeat,epoch,val_loss\n")
    for w_b, rep, epoch, val in sorted(rows, key=lambda r: (r[0], r[1], r[2])):
        buf.write(f"{_fmt(float(w_b))},{rep},{epoch},{_fmt(val)}\n")
    return buf.getvalue()


def init_robustness_summary_csv(finals) -> str:
    buf = io.StringIO()
    buf.write("w_b_const,final_loss_mean,final_loss_min,final_loss_max,spread\n")
    for w_b in sorted(finals):
        vals = np.asarray(finals[w_b], dtype=np.float64)
        buf.write(",".join([_fmt(float(w_b)), _fmt(float(np.mean(vals))),
                            _fmt(float(np.min(vals))), _fmt(float(np.max(vals))),
                            _fmt(float(np.max(vals) - np.min(vals)))]) + "\n")
    return buf.getvalue()
