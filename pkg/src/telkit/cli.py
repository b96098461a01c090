"""Command-line entry points.

Subcommands cover the whole workflow: synthesize a practice corpus,
prepare a manifest from a corpus tree, train, evaluate a checkpoint,
dump embeddings, and nearest-neighbour classification in embedding space.

Exit codes: 0 success, 1 usage or configuration problems, 2 data problems
(unreadable audio, bad manifests, corrupt checkpoints), 3 numerical
failures (non-finite values in the forward/backward pass).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import AugmentSpec
from .config import (
    feature_config_to_doc,
    load_run_settings,
    resolved_run_doc,
    write_config_echo,
)
from .data import Manifest, load_groups, load_split, scan_digit_corpus, scan_genre_corpus
from .errors import ConfigError, DataError, NumericalError, TelkitError
from .evaluate import embed_dataset, evaluate, export_embeddings, knn_classify
from .features import FeatureConfig
from .model import ModelConfig, init_model, load_checkpoint
from .synth import generate_digit_corpus
from .train import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_blocks(text):
    """'16,3,1,2;32,3,1,2' -> ((16,3,1,2), (32,3,1,2)); '' -> no conv trunk."""
    text = text.strip()
    if not text:
        return ()
    blocks = []
    for part in text.split(";"):
        nums = part.split(",")
        if len(nums) != 4:
            raise ConfigError(f"bad block {part!r}: expected out_channels,kernel,stride,pool")
        try:
            blocks.append(tuple(int(v) for v in nums))
        except ValueError as e:
            raise ConfigError(f"bad block {part!r}: {e}") from e
    return tuple(blocks)


def build_parser():
    ap = _Parser(prog="telkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-digits", parents=[], help="write a synthetic spoken-digit corpus")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--speakers", type=int, default=6)
    sp.add_argument("--digits", type=int, default=10)
    sp.add_argument("--takes", type=int, default=50)
    sp.add_argument("--sample-rate", type=int, default=16000)
    sp.add_argument("--seed", type=int, default=0)

    pp = sub.add_parser("prepare", help="scan a corpus tree into a manifest CSV")
    pp.add_argument("layout", choices=("digits", "genres"))
    pp.add_argument("--root", required=True, help="corpus directory")
    pp.add_argument("--out", required=True, help="manifest path to write")
    pp.add_argument("--val-per-speaker", type=int, default=5,
                    help="digits layout: held-out takes per (speaker, digit)")
    pp.add_argument("--val-per-class", type=int, default=21,
                    help="genres layout: held-out files per class")
    pp.add_argument("--groups", help="optional speaker,group CSV")
    pp.add_argument("--images", action="store_true",
                    help="genres layout: scan spectrogram PNGs instead of audio")

    tp = sub.add_parser("train", help="train a model from a manifest")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--run-dir", required=True)
    tp.add_argument("--config", help="JSON run config file")
    tp.add_argument("--regime", choices=("cel", "triplet", "tel"))
    tp.add_argument("--seed", type=int)
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--batch-size", type=int)
    tp.add_argument("--lr", type=float)
    tp.add_argument("--margin", type=float)
    tp.add_argument("--lambda-triplet", type=float)
    tp.add_argument("--mining", choices=("semi_hard", "paper_literal", "hardest"))
    tp.add_argument("--sampler", choices=("auto", "shuffle", "class_balanced"))
    tp.add_argument("--patience", type=int, dest="early_stop_patience",
                    help="early-stop patience in epochs")
    tp.add_argument("--embedding-dim", type=int)
    tp.add_argument("--normalize-embeddings", action="store_true", default=None)
    tp.add_argument("--blocks", help="conv trunk, e.g. '16,3,1,2;32,3,1,2'")
    tp.add_argument("--duration", type=float, help="clip seconds")
    tp.add_argument("--n-mels", type=int)
    tp.add_argument("--sample-rate", type=int, dest="feat_sample_rate")
    tp.add_argument("--augment", action="store_true", default=None,
                    help="enable default masking augmentation")
    tp.add_argument("--quiet", action="store_true")

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--split", default="val", choices=("train", "val", "test"))
    ep.add_argument("--batch-size", type=int, default=64)
    ep.add_argument("--out-dir", help="write confusion.csv here")

    bp = sub.add_parser("embed", help="dump embeddings for a manifest split")
    bp.add_argument("--checkpoint", required=True)
    bp.add_argument("--manifest", required=True)
    bp.add_argument("--split", default="val", choices=("train", "val", "test"))
    bp.add_argument("--out", required=True, help="TSV path to write")
    bp.add_argument("--batch-size", type=int, default=64)

    kp = sub.add_parser("knn", help="nearest-neighbour classification in embedding space")
    kp.add_argument("--checkpoint", required=True)
    kp.add_argument("--manifest", required=True)
    kp.add_argument("--ref-split", default="train", choices=("train", "val", "test"))
    kp.add_argument("--query-split", default="val", choices=("train", "val", "test"))
    kp.add_argument("--k", type=int, default=1)
    kp.add_argument("--metric", default="euclidean", choices=("euclidean", "cosine"))
    kp.add_argument("--exclude-self", action="store_true",
                    help="leave-one-out when ref and query are the same split")
    return ap


def cmd_synth(args):
    paths, groups_path = generate_digit_corpus(
        args.out,
        n_speakers=args.speakers,
        n_digits=args.digits,
        takes_per_digit=args.takes,
        sample_rate=args.sample_rate,
        seed=args.seed,
    )
    print(f"wrote {len(paths)} clips and {groups_path}")
    return 0


def cmd_prepare(args):
    if args.layout == "digits":
        groups = load_groups(args.groups) if args.groups else None
        manifest = scan_digit_corpus(args.root, val_per_speaker=args.val_per_speaker, groups=groups)
        skipped = []
    else:
        manifest, skipped = scan_genre_corpus(
            args.root, val_per_class=args.val_per_class, images=args.images
        )
    manifest.save(args.out)
    n_train = len(manifest.split("train"))
    n_val = len(manifest.split("val"))
    print(f"{args.out}: {len(manifest.rows)} rows ({n_train} train, {n_val} val),"
          f" classes: {' '.join(manifest.class_names)}")
    for line in skipped:
        print(f"skipped {line}", file=sys.stderr)
    return 0


def _resolve_train_settings(args):
    if args.config:
        settings = load_run_settings(args.config)
        features, model_over, tcfg = settings.features, dict(settings.model), settings.train
    else:
        features, model_over, tcfg = FeatureConfig(), {}, TrainConfig()

    feat_over = {}
    if args.duration is not None:
        feat_over["duration_s"] = args.duration
    if args.n_mels is not None:
        feat_over["n_mels"] = args.n_mels
    if args.feat_sample_rate is not None:
        feat_over["sample_rate"] = args.feat_sample_rate
    if feat_over:
        features = replace(features, **feat_over)
    features.validate()

    train_over = {
        k: v
        for k, v in (
            ("regime", args.regime), ("seed", args.seed), ("max_epochs", args.epochs),
            ("batch_size", args.batch_size), ("lr", args.lr), ("margin", args.margin),
            ("lambda_triplet", args.lambda_triplet), ("mining", args.mining),
            ("sampler", args.sampler), ("early_stop_patience", args.early_stop_patience),
        )
        if v is not None
    }
    if train_over:
        tcfg = replace(tcfg, **train_over)

    if args.embedding_dim is not None:
        model_over["embedding_dim"] = args.embedding_dim
    if args.normalize_embeddings:
        model_over["normalize_embeddings"] = True
    if args.blocks is not None:
        model_over["conv_blocks"] = _parse_blocks(args.blocks)
    if args.augment and tcfg.augment is None:
        tcfg = replace(tcfg, augment=AugmentSpec())
    return features, model_over, tcfg


def cmd_train(args):
    features, model_over, tcfg = _resolve_train_settings(args)
    manifest = Manifest.load(args.manifest)
    train_set, class_names = load_split(manifest, "train", features)
    val_set, _ = load_split(manifest, "val", features)

    input_shape = (features.n_mels, features.n_frames)
    pinned_shape = model_over.pop("input_shape", None)
    if pinned_shape is not None and tuple(pinned_shape) != input_shape:
        raise ConfigError(
            f"config pins input_shape {tuple(pinned_shape)} but features produce {input_shape}"
        )
    pinned_classes = model_over.pop("n_classes", None)
    if pinned_classes is not None and pinned_classes != len(class_names):
        raise ConfigError(
            f"config pins n_classes {pinned_classes} but the manifest has {len(class_names)}"
        )
    mcfg = ModelConfig(input_shape=input_shape, n_classes=len(class_names), **model_over)
    mcfg.validate()
    if tcfg.augment is not None:
        tcfg.augment.validate(n_mels=features.n_mels, n_frames=features.n_frames)

    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(resolved_run_doc(features, mcfg, tcfg), run_dir / "config.json")

    model = init_model(mcfg, seed=tcfg.seed)
    report = train(
        model, train_set, val_set, tcfg, class_names,
        run_dir=run_dir,
        log=None if args.quiet else sys.stderr,
        checkpoint_metadata={"features": feature_config_to_doc(features)},
    )
    best = next((r for r in report.rows if r.epoch == report.best_epoch), None)
    acc = f"{best.val_acc:.4f}" if best else "n/a"
    print(
        f"{report.stopped_reason} after {len(report.rows)} epochs;"
        f" best epoch {report.best_epoch} val_total {report.best_val_total:.6f}"
        f" val_acc {acc}; artifacts in {run_dir}"
    )
    return 0


def _load_for_checkpoint(args, split):
    model, meta = load_checkpoint(args.checkpoint)
    if "features" not in meta or "class_names" not in meta:
        raise DataError(f"{args.checkpoint}: checkpoint lacks features/class_names metadata")
    features = FeatureConfig(**meta["features"])
    manifest = Manifest.load(args.manifest)
    if manifest.class_names != meta["class_names"]:
        raise DataError(
            f"manifest classes {manifest.class_names} do not match"
            f" checkpoint classes {meta['class_names']}"
        )
    dataset, class_names = load_split(manifest, split, features)
    return model, meta, dataset, class_names


def cmd_eval(args):
    model, meta, dataset, class_names = _load_for_checkpoint(args, args.split)
    margin = meta.get("train_config", {}).get("margin", 0.2)
    mining = meta.get("train_config", {}).get("mining", "semi_hard")
    res = evaluate(model, dataset, class_names, batch_size=args.batch_size,
                   margin=margin, mining=mining)
    print(f"split {args.split}: {res.n_examples} examples")
    print(f"accuracy {res.accuracy:.6f}")
    print(f"mean_cel {res.mean_cel:.6f}")
    print(f"mean_triplet {res.mean_triplet:.6f} over {res.mined_triplets} mined"
          f" ({res.active_triplets} active)")
    for group, acc in res.groups.accuracies.items():
        label = group if group else "(ungrouped)"
        print(f"group {label}: n {res.groups.counts[group]} accuracy {acc:.6f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        res.confusion.save(out / "confusion.csv")
        print(f"wrote {out / 'confusion.csv'}")
    return 0


def cmd_embed(args):
    model, meta, dataset, _ = _load_for_checkpoint(args, args.split)
    export_embeddings(model, dataset, args.out, batch_size=args.batch_size)
    print(f"wrote {len(dataset)} x {model.config.embedding_dim} embeddings to {args.out}")
    return 0


def cmd_knn(args):
    model, meta, ref_set, _ = _load_for_checkpoint(args, args.ref_split)
    if args.query_split == args.ref_split:
        query_set = ref_set
    else:
        features = FeatureConfig(**meta["features"])
        manifest = Manifest.load(args.manifest)
        query_set, _ = load_split(manifest, args.query_split, features)
    ref_emb = embed_dataset(model, ref_set)
    query_emb = ref_emb if query_set is ref_set else embed_dataset(model, query_set)
    ref_labels = np.asarray([ex.label for ex in ref_set])
    query_labels = np.asarray([ex.label for ex in query_set])
    preds = knn_classify(
        ref_emb, ref_labels, query_emb,
        k=args.k, metric=args.metric, exclude_self=args.exclude_self,
    )
    acc = float((preds == query_labels).mean())
    print(f"knn k={args.k} metric={args.metric} ref={args.ref_split}"
          f" query={args.query_split}: accuracy {acc:.6f} over {len(query_set)}")
    return 0


_COMMANDS = {
    "synth-digits": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "knn": cmd_knn,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except TelkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
