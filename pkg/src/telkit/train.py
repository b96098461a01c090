"""Training loop: three regimes over one shared trunk.

``cel``     classification only; the triplet machinery is never invoked.
``triplet`` metric learning only; logits never enter a loss, so the
            classifier head receives no gradient and is left bit-for-bit
            at its initialization (the optimizer skips grad-less params).
``tel``     the joint objective, cross entropy plus the weighted hinge.

Early stopping watches the regime's own validation total (mean CE per
example, mean hinge per mined triplet, or their weighted sum) with a
patience counter; the best epoch's weights are checkpointed, training
continues from the current ones.

Reproducibility: every stochastic choice (batch composition, mask draws)
is keyed by (seed, epoch, batch) through independent generators, so a rerun
with one config is bit-identical, and run wall time never enters the
artifacts.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentSpec, spec_augment
from .autodiff import backward, no_grad
from .batching import make_batches
from .errors import ConfigError, DataError, NoValidTriplets
from .evaluate import EpochRow, emit_curves, evaluate
from .features import Spectrogram
from .losses import cross_entropy, mine_triplets, tel_loss, triplet_hinges, triplet_loss
from .model import save_checkpoint
from .optim import Adam

REGIMES = ("cel", "triplet", "tel")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "tel"
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 2
    seed: int = 0
    margin: float = 0.2
    lambda_triplet: float = 1.0
    mining: str = "semi_hard"
    sampler: str = "auto"  # auto: class_balanced when a triplet term is on
    sampler_p: int | None = None
    sampler_k: int | None = None
    reduction: str = "sum"
    augment: AugmentSpec | None = None
    l2_lambda: float | None = None  # None: defer to the model config

    def validate(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ConfigError("max_epochs must be >= 0 and early_stop_patience >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")
        if self.lambda_triplet < 0:
            raise ConfigError("lambda_triplet must be non-negative")
        if self.regime in ("triplet", "tel") and self.batch_size < 2:
            raise ConfigError("triplet regimes need batch_size >= 2")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")
        if self.l2_lambda is not None and self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")
        if self.augment is not None:
            self.augment.validate()

    @property
    def effective_sampler(self):
        if self.sampler != "auto":
            return self.sampler
        return "class_balanced" if self.regime in ("triplet", "tel") else "shuffle"


@dataclass
class RunReport:
    rows: list
    best_epoch: int  # 1-based; 0 when no epoch ran
    best_val_total: float
    stopped_reason: str  # "early-stop" | "max-epochs"
    checkpoint_path: str | None
    counters: dict
    class_names: list


def _augmented_batch(dataset, idx, augment, rng):
    feats = []
    for i in idx:
        f = dataset[i].features
        if augment is not None:
            spec = Spectrogram(f, f.shape[0], f.shape[1], 0.0)
            f = spec_augment(spec, augment, rng).values
        feats.append(f)
    return np.stack(feats)[:, None]


def train(model, train_set, val_set, cfg, class_names=None, run_dir=None,
          log=sys.stderr, checkpoint_metadata=None):
    """Run one training job; returns a RunReport.

    ``class_names`` default to the stringified class indices.  ``run_dir``
    (a Path or None) receives best.ckpt, metrics.csv and curves.svg;
    without it the job runs purely in memory.  ``log`` gets a one-line
    progress summary per epoch, or pass None for silence.
    ``checkpoint_metadata`` rides along in best.ckpt; the CLI stores the
    feature config there so later commands featurize identically.
    """
    cfg.validate()
    if not train_set or not val_set:
        raise DataError("need non-empty train and validation sets")
    n_classes = model.config.n_classes
    if class_names is None:
        class_names = [str(i) for i in range(n_classes)]
    if len(class_names) != n_classes:
        raise ConfigError(f"{len(class_names)} class names for a {n_classes}-way model")
    for name, ds in (("train", train_set), ("val", val_set)):
        labs = {ex.label for ex in ds}
        if min(labs) < 0 or max(labs) >= n_classes:
            raise DataError(f"{name} labels outside [0, {n_classes})")
        shp = {ex.features.shape for ex in ds}
        if shp != {tuple(model.config.input_shape)}:
            raise DataError(f"{name} feature shapes {shp} != model input {model.config.input_shape}")

    decay = model.config.l2_lambda if cfg.l2_lambda is None else cfg.l2_lambda
    opt = Adam(
        model.params,
        lr=cfg.lr,
        weight_decay=decay,
        decay_params=model.penalized_params(),
    )
    counters = {
        "train_mining_calls": 0,
        "val_mining_calls": 0,
        "skipped_batches": 0,  # triplet regime, nothing minable
        "satisfied_batches": 0,  # mined empty: every pair already beyond margin
        "optimizer_steps": 0,
    }

    rows = []
    best_val = np.inf
    best_epoch = 0
    ckpt_path = str(run_dir / "best.ckpt") if run_dir is not None else None
    reason = "max-epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_set, cfg, epoch_seed=[cfg.seed, epoch, 0xB])
        cel_sum = 0.0
        hinge_sum = 0.0
        seen = 0
        mined = 0
        active = 0
        correct = 0
        structural_failures = 0

        for bi, idx in enumerate(batches):
            aug_rng = np.random.default_rng([cfg.seed, epoch, bi, 0xA6]) if cfg.augment else None
            x = _augmented_batch(train_set, idx, cfg.augment, aug_rng)
            y = np.asarray([train_set[i].label for i in idx])
            emb = model.embed(x)

            if cfg.regime == "cel":
                logits = model.classify(emb)
                loss = cross_entropy(logits, y, reduction=cfg.reduction)
                cel_sum += float(loss.data) if cfg.reduction == "sum" else float(loss.data) * len(idx)
            elif cfg.regime == "triplet":
                counters["train_mining_calls"] += 1
                try:
                    tset = mine_triplets(emb.data, y, margin=cfg.margin, strategy=cfg.mining)
                except NoValidTriplets:
                    counters["skipped_batches"] += 1
                    structural_failures += 1
                    continue
                with no_grad():
                    logits = model.classify(emb)
                correct += int((np.argmax(logits.data, axis=1) == y).sum())
                hinges = triplet_hinges(emb, tset, margin=cfg.margin)
                hinge_sum += float(np.where(hinges > 0, hinges, 0.0).sum())
                mined += len(tset)
                active += int((hinges > 0).sum())
                if len(tset) == 0:
                    counters["satisfied_batches"] += 1
                    seen += len(idx)
                    continue
                loss = triplet_loss(emb, tset, margin=cfg.margin, reduction=cfg.reduction)
            else:  # tel
                logits = model.classify(emb)
                counters["train_mining_calls"] += 1
                try:
                    tset = mine_triplets(emb.data, y, margin=cfg.margin, strategy=cfg.mining)
                except NoValidTriplets:
                    tset = None
                if tset is None:
                    loss = cross_entropy(logits, y, reduction=cfg.reduction)
                    bd_cel = float(loss.data)
                    bd_raw, bd_active, bd_mined = 0.0, 0, 0
                else:
                    loss, bd = tel_loss(
                        logits, y, emb, tset,
                        margin=cfg.margin,
                        lambda_triplet=cfg.lambda_triplet,
                        reduction=cfg.reduction,
                    )
                    bd_cel = bd.cel_term
                    bd_raw = bd.triplet_term * (len(tset) if cfg.reduction == "mean" and len(tset) else 1)
                    bd_active, bd_mined = bd.active_triplets, bd.mined_triplets
                cel_sum += bd_cel if cfg.reduction == "sum" else bd_cel * len(idx)
                hinge_sum += bd_raw
                mined += bd_mined
                active += bd_active

            if cfg.regime != "triplet":
                correct += int((np.argmax(logits.data, axis=1) == y).sum())
            seen += len(idx)
            backward(loss)
            opt.step()
            opt.zero_grad()
            counters["optimizer_steps"] += 1

        if cfg.regime == "triplet" and structural_failures == len(batches):
            raise DataError(
                "no training batch could form a single triplet this epoch;"
                " check labels and the sampler settings"
            )

        ev = evaluate(
            model, val_set, class_names,
            batch_size=cfg.batch_size, margin=cfg.margin, mining=cfg.mining,
        )
        counters["val_mining_calls"] += ev.mining_calls

        train_cel = cel_sum / seen if seen else 0.0
        train_trip = hinge_sum / mined if mined else 0.0
        if cfg.regime == "cel":
            train_total, val_total = train_cel, ev.mean_cel
        elif cfg.regime == "triplet":
            train_total, val_total = train_trip, ev.mean_triplet
        else:
            train_total = train_cel + cfg.lambda_triplet * train_trip
            val_total = ev.mean_cel + cfg.lambda_triplet * ev.mean_triplet

        row = EpochRow(
            epoch=epoch,
            train_total=train_total,
            train_cel=train_cel,
            train_triplet=train_trip,
            train_acc=correct / seen if seen else 0.0,
            train_active=active,
            train_mined=mined,
            val_total=val_total,
            val_cel=ev.mean_cel,
            val_triplet=ev.mean_triplet,
            val_acc=ev.accuracy,
            wall_s=time.perf_counter() - t0,
        )
        rows.append(row)
        if log is not None:
            print(
                f"epoch={epoch} train_loss={train_total:.3f}"
                f" val_loss={val_total:.3f} val_acc={ev.accuracy:.2f}",
                file=log,
            )

        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            if run_dir is not None:
                meta = {
                    "class_names": list(class_names),
                    "best_epoch": epoch,
                    "best_val_total": val_total,
                    "train_config": train_config_to_doc(cfg),
                }
                meta.update(checkpoint_metadata or {})
                save_checkpoint(model, ckpt_path, metadata=meta)
        elif epoch - best_epoch >= cfg.early_stop_patience:
            reason = "early-stop"
            break

    report = RunReport(
        rows=rows,
        best_epoch=best_epoch,
        best_val_total=float(best_val) if rows else 0.0,
        stopped_reason=reason,
        checkpoint_path=ckpt_path if (run_dir is not None and rows) else None,
        counters=counters,
        class_names=list(class_names),
    )
    if run_dir is not None and rows:
        emit_curves(report, run_dir)
    return report


def train_config_to_doc(cfg):
    return {
        "regime": cfg.regime,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "early_stop_patience": cfg.early_stop_patience,
        "seed": cfg.seed,
        "margin": cfg.margin,
        "lambda_triplet": cfg.lambda_triplet,
        "mining": cfg.mining,
        "sampler": cfg.sampler,
        "sampler_p": cfg.sampler_p,
        "sampler_k": cfg.sampler_k,
        "reduction": cfg.reduction,
        "l2_lambda": cfg.l2_lambda,
    }


def train_config_from_doc(doc):
    known = set(train_config_to_doc(TrainConfig()))
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown train config keys: {sorted(extra)}")
    cfg = replace(TrainConfig(), **doc)
    cfg.validate()
    return cfg
