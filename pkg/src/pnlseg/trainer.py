"""Mean-teacher training loop over point-neighborhood supervision.

Procedure: pretrain the teacher on the pixel-labeled subset, then repeat
for every student epoch: refresh pseudo-labels for the point-only subset
with the teacher, train the student one pass (or several inner loops) on
the mixed-up samples, and after each inner loop pull the teacher toward
the student by exponential moving average. The final artifact is always
the teacher's weights.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace, asdict
from pathlib import Path

import numpy as np
import torch

from . import metrics as metrics_mod
from .augment import MixConfig, augment_student, augment_teacher, mirror, mirror_map, mirror_nmask
from .config import RunConfig, write_resolved
from .core import SPLIT_D1, SPLIT_D2, load_dataset, load_heldback_masks, validate_sample
from .errors import ConfigError, DataError, DivergenceError
from .losses import LossWeights, student_loss, teacher_loss
from .model import ReferenceNet, image_batch_to_tensor, predict_probs
from .neighborhood import build_bank, sample_neighborhood_mask
from .psm import PseudoLabel, apply_threshold, psm_score

# sub-stream tags so every consumer of randomness has its own seed lineage
_STREAM_INIT = 1
_STREAM_AUGMENT = 2


@dataclass
class TrainerState:
    """Everything needed to continue (or audit) a run."""

    theta_t: torch.Tensor
    theta_s: torch.Tensor
    alpha: float
    lam_pretrain: float
    lam_student: float
    teacher_epochs: int
    student_epochs: int
    inner_loops: int
    epoch: int = 0              # completed student (outer) epochs
    pretrain_done: bool = False


def ema_update(theta_t: torch.Tensor, theta_s: torch.Tensor, alpha: float) -> torch.Tensor:
    """theta <- alpha * teacher + (1 - alpha) * student, elementwise."""
    if theta_t.shape != theta_s.shape:
        raise ValueError(
            f"parameter vectors differ in length: {tuple(theta_t.shape)} vs {tuple(theta_s.shape)}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return alpha * theta_t + (1.0 - alpha) * theta_s


def _forward_pair(model, image):
    """Predictions on an image and on its mirror, in one 2-sample batch."""
    batch = image_batch_to_tensor([image, mirror(image)])
    probs = model.forward(batch)
    return probs[0], probs[1]


def _check_finite(value: torch.Tensor, where: str):
    if not torch.isfinite(value).all():
        raise DivergenceError(f"non-finite loss at {where}")


class _StepLog:
    """Per-step loss component log (CSV columns: l_pxl, l_cs, l_pn, s, total)."""

    FIELDS = ["phase", "epoch", "step", "sample_id", "l_pxl", "l_cs", "l_pn", "s", "total"]

    def __init__(self, path, append=False):
        self.path = Path(path)
        mode = "a" if append and self.path.exists() else "w"
        self._fh = open(self.path, mode, newline="")
        self._writer = csv.writer(self._fh)
        if mode == "w":
            self._writer.writerow(self.FIELDS)
        self.epoch_totals = []

    def write(self, phase, epoch, step, sample_id, breakdown):
        def f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        row = [
            phase, epoch, step, sample_id,
            repr(f(breakdown.l_pxl)), repr(f(breakdown.l_cs)),
            repr(f(breakdown.l_pn)), repr(f(breakdown.s)), repr(f(breakdown.total)),
        ]
        self._writer.writerow(row)
        self.epoch_totals.append(
            (f(breakdown.l_pxl), f(breakdown.l_cs), f(breakdown.l_pn), f(breakdown.total))
        )

    def epoch_means(self):
        if not self.epoch_totals:
            return (math.nan,) * 4
        arr = np.asarray(self.epoch_totals)
        means = arr.mean(axis=0)
        self.epoch_totals = []
        return tuple(float(v) for v in means)

    def close(self):
        self._fh.close()


class _EpochLog:
    FIELDS = [
        "epoch", "phase", "l_pxl", "l_cs", "l_pn", "total",
        "psm_mean", "psm_min", "psm_frac_below", "containment", "pseudo_miou",
    ]

    def __init__(self, path, append=False):
        self.path = Path(path)
        mode = "a" if append and self.path.exists() else "w"
        self._fh = open(self.path, mode, newline="")
        self._writer = csv.writer(self._fh)
        if mode == "w":
            self._writer.writerow(self.FIELDS)

    def write(self, epoch, phase, means, psm_summary=None, containment=None, pseudo_miou=None):
        def fmt(v):
            return "" if v is None else repr(float(v))

        l_pxl, l_cs, l_pn, total = means
        psm_summary = psm_summary or {}
        self._writer.writerow([
            epoch, phase, fmt(l_pxl), fmt(l_cs), fmt(l_pn), fmt(total),
            fmt(psm_summary.get("mean")), fmt(psm_summary.get("min")),
            fmt(psm_summary.get("frac_below")), fmt(containment), fmt(pseudo_miou),
        ])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _derived_seed(root_seed: int, stream: int) -> int:
    ss = np.random.SeedSequence((root_seed, stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def make_augment_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, _STREAM_AUGMENT))))


def pretrain_teacher(d1, model, bank, cfg: RunConfig, rng, step_log=None, epoch_log=None):
    """Train the teacher on the pixel-labeled subset for teacher_epochs."""
    if not d1:
        raise ConfigError("pixel-labeled subset is empty")
    w = LossWeights(cfg.lambda_pretrain)
    mix = MixConfig(cfg.beta_a, cfg.beta_b, cfg.seed)
    model.train()
    for e in range(cfg.teacher_epochs):
        order = rng.permutation(len(d1))
        for k, idx in enumerate(order):
            x = d1[int(idx)]
            aug = augment_teacher(x, bank, mix, rng=rng, use_pnmxp=cfg.pnmxp)
            pred, pred_m = _forward_pair(model, aug.image)
            labels = (aug.label, mirror_map(aug.label))
            nmasks = (aug.nmask, mirror_nmask(aug.nmask))
            br = teacher_loss((pred, pred_m), labels, nmasks, w, include_pn=cfg.pns)
            _check_finite(br.total, f"teacher epoch {e} step {k} sample {x.id}")
            model.step(br.total, cfg.learning_rate)
            if step_log is not None:
                step_log.write("teacher", e, k, x.id, br)
        if epoch_log is not None and step_log is not None:
            epoch_log.write(e, "teacher", step_log.epoch_means())


def mine_pseudo_labels(model, d2, radius: int, epoch: int = 0,
                       psm_variant: str = "count", nmasks=None) -> dict:
    """Teacher forward pass over the point-only subset; scores attached.

    No augmentation, evaluation mode, soft probabilities. Scores are
    always recomputed from scratch against the samples' neighborhoods.
    """
    probs = predict_probs(model, [s.image for s in d2])
    out = {}
    for s, p in zip(d2, probs):
        nmask = (nmasks or {}).get(s.id) or sample_neighborhood_mask(s, radius)
        score = psm_score(p, nmask, psm_variant)
        out[s.id] = PseudoLabel(probs=p, produced_at=epoch, score=score)
    return out


def train_student_epoch(teacher, student, d1, d2, bank, pseudos, cfg: RunConfig,
                        rng, epoch: int, step_log=None):
    """One outer epoch: inner_loops passes over D2, EMA after each pass."""
    w = LossWeights(cfg.lambda_student)
    mix = MixConfig(cfg.beta_a, cfg.beta_b, cfg.seed)
    student.train()
    for m in range(cfg.inner_loops):
        order = rng.permutation(len(d2))
        for k, idx in enumerate(order):
            x2 = d2[int(idx)]
            x2p = replace(x2, pseudo=pseudos[x2.id])
            x1 = d1[int(rng.integers(len(d1)))]
            aug = augment_student(x2p, x1, bank, mix, rng=rng,
                                  use_pnmxp=cfg.pnmxp, use_pvrmxp=cfg.pvrmxp)
            if cfg.psm:
                s = apply_threshold(aug.score, cfg.psm_threshold)
            else:
                s = 1.0
            pred, pred_m = _forward_pair(student, aug.image)
            labels = (aug.label, mirror_map(aug.label))
            nmasks = (aug.nmask, mirror_nmask(aug.nmask))
            # the grid transplant can swallow a small neighborhood entirely;
            # an empty mask contributes nothing rather than a 0/0 loss
            include_pn = cfg.pns and aug.nmask.area > 0
            br = student_loss((pred, pred_m), labels, s, nmasks, w, include_pn=include_pn)
            _check_finite(br.total, f"student epoch {epoch} step {k} sample {x2.id}")
            student.step(br.total, cfg.learning_rate)
            if step_log is not None:
                step_log.write("student", epoch, m * len(d2) + k, x2.id, br)
        new_t = ema_update(teacher.parameter_vector(), student.parameter_vector(), cfg.alpha)
        teacher.load_parameter_vector(new_t)


def _pseudo_quality(pseudos: dict, d2, heldback: dict):
    """Containment fraction and pseudo-label mIoU against held-back masks."""
    probs_list = [pseudos[s.id].probs for s in d2]
    points_list = [s.points for s in d2]
    containment = metrics_mod.containment_fraction(probs_list, points_list)
    gts = [heldback.get(s.id) for s in d2]
    if any(g is None for g in gts) or not gts:
        return containment, None
    preds = [p > metrics_mod.FOREGROUND_THRESHOLD for p in probs_list]
    rep = metrics_mod.evaluate_masks(preds, [g.values.astype(bool) for g in gts])
    return containment, rep.miou


def save_checkpoint(path, state: TrainerState, cfg: RunConfig, rng):
    torch.save(
        {
            "teacher": state.theta_t,
            "student": state.theta_s,
            "epoch": state.epoch,
            "pretrain_done": state.pretrain_done,
            "augment_rng": rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "config": asdict(cfg),
        },
        path,
    )


def load_checkpoint(path):
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return torch.load(path, weights_only=False)


_RESUME_KEYS = (
    "data", "radius", "alpha", "lambda_pretrain", "lambda_student",
    "teacher_epochs", "student_epochs", "inner_loops", "learning_rate",
    "seed", "pns", "psm", "pnmxp", "pvrmxp", "psm_threshold", "psm_variant",
    "beta_a", "beta_b", "student_init",
)


@dataclass
class RunResult:
    out_dir: Path
    teacher_params: torch.Tensor
    report: object = None       # MetricsReport when test_data was given
    state: TrainerState = None


def run(cfg: RunConfig) -> RunResult:
    """Execute the full procedure and persist all artifacts into cfg.out."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    samples = load_dataset(cfg.data)
    problems = []
    for s in samples:
        problems += [f"{s.id}: {v}" for v in validate_sample(s)]
    if problems:
        raise DataError("invalid training samples: " + "; ".join(problems[:10]))
    d1 = [s for s in samples if s.split == SPLIT_D1]
    d2 = [s for s in samples if s.split == SPLIT_D2]
    if not d1:
        raise ConfigError("dataset has no pixel-labeled (D1) samples")
    heldback = load_heldback_masks(cfg.data)

    bank = build_bank(samples, cfg.radius)
    bank.save(out / "bank.npz")
    nmask_cache = {s.id: sample_neighborhood_mask(s, cfg.radius) for s in d2}

    torch.manual_seed(_derived_seed(cfg.seed, _STREAM_INIT))
    channels = samples[0].image.channels
    teacher = ReferenceNet(in_channels=channels)
    student = ReferenceNet(in_channels=channels)
    if cfg.student_init == "teacher":
        student.load_parameter_vector(teacher.parameter_vector())
    rng = make_augment_rng(cfg.seed)

    state = TrainerState(
        theta_t=teacher.parameter_vector(),
        theta_s=student.parameter_vector(),
        alpha=cfg.alpha,
        lam_pretrain=cfg.lambda_pretrain,
        lam_student=cfg.lambda_student,
        teacher_epochs=cfg.teacher_epochs,
        student_epochs=cfg.student_epochs,
        inner_loops=cfg.inner_loops,
    )

    resuming = bool(cfg.resume)
    if resuming:
        ck = load_checkpoint(cfg.resume)
        mismatched = [
            k for k in _RESUME_KEYS if ck["config"].get(k) != getattr(cfg, k)
        ]
        if mismatched:
            raise ConfigError(
                "resume config mismatch on: " + ", ".join(mismatched)
            )
        teacher.load_parameter_vector(ck["teacher"])
        student.load_parameter_vector(ck["student"])
        rng.bit_generator.state = ck["augment_rng"]
        torch.set_rng_state(ck["torch_rng"])
        state.theta_t = teacher.parameter_vector()
        state.theta_s = student.parameter_vector()
        state.epoch = ck["epoch"]
        state.pretrain_done = ck["pretrain_done"]

    step_log = _StepLog(out / "losses.csv", append=resuming)
    epoch_log = _EpochLog(out / "metrics.csv", append=resuming)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    try:
        if not state.pretrain_done:
            pretrain_teacher(d1, teacher, bank, cfg, rng, step_log, epoch_log)
            state.pretrain_done = True
            state.theta_t = teacher.parameter_vector()
            state.theta_s = student.parameter_vector()
            save_checkpoint(ckpt_dir / "pretrain.pt", state, cfg, rng)

        for e in range(state.epoch, cfg.student_epochs):
            pseudos = mine_pseudo_labels(
                teacher, d2, cfg.radius, epoch=e,
                psm_variant=cfg.psm_variant, nmasks=nmask_cache,
            )
            scores = [pseudos[s.id].score for s in d2]
            if scores:
                arr = np.asarray(scores)
                psm_summary = {
                    "mean": float(arr.mean()), "min": float(arr.min()),
                    "frac_below": float((arr < 0.5).mean()),
                }
            else:
                psm_summary = {}
            containment, pseudo_miou = _pseudo_quality(pseudos, d2, heldback) if d2 else (None, None)

            train_student_epoch(teacher, student, d1, d2, bank, pseudos, cfg,
                                rng, epoch=e, step_log=step_log)
            state.epoch = e + 1
            state.theta_t = teacher.parameter_vector()
            state.theta_s = student.parameter_vector()
            epoch_log.write(e, "student", step_log.epoch_means(), psm_summary,
                            containment, pseudo_miou)
            if cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"epoch_{e + 1:04d}.pt", state, cfg, rng)

        save_checkpoint(ckpt_dir / "final.pt", state, cfg, rng)
        torch.save({"teacher": state.theta_t, "in_channels": channels},
                   out / "teacher_final.pt")
    finally:
        step_log.close()
        epoch_log.close()

    report = None
    if cfg.test_data:
        test_samples = load_dataset(cfg.test_data)
        teacher.load_parameter_vector(state.theta_t)
        report = metrics_mod.evaluate(teacher, test_samples, average=cfg.eval_average)
        (out / "report.json").write_text(report.to_json())
    return RunResult(out_dir=out, teacher_params=state.theta_t, report=report, state=state)
