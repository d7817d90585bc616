"""Command-line entry point: synth, train, eval, augment, analyze.

All randomness flows from the single --seed flag; every artifact written
records the resolved config digest and that seed. On failure the process
prints one machine-parsable line ``error:<category>: <message>`` to stderr
and exits nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis as geom
from .config import RunConfig, load_run_config
from .episodes import (
    CLASSIFIER_KINDS,
    LEDGER_HEADER,
    SCHEME_KINDS,
    ClassifierConfig,
    augment_feature_set,
    prepare_scheme,
    run_benchmark,
)
from .errors import ConfigError, DataError, ToolkitError
from .model import ModelConfig
from .synth import (
    SPLIT_BASE,
    SPLIT_NOVEL,
    LabeledDataset,
    load_feature_file,
    make_task_spec,
    sample_dataset,
    save_feature_file,
)
from .train import TrainConfig, init_model, load_checkpoint, save_checkpoint, train


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_file(path, what: str) -> str:
    if path is None:
        raise ConfigError(f"{what} not given (flag or config)")
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")
    return path


def _original_labels(dataset: LabeledDataset) -> np.ndarray:
    if dataset.label_map is None:
        return dataset.labels
    return np.asarray([dataset.label_map[int(l)] for l in dataset.labels], dtype=np.int64)


def cmd_synth(config: RunConfig, seed: int, out_dir: str) -> int:
    data = config.data
    spec = make_task_spec(
        n_base_classes=data["n_base_classes"],
        n_novel_classes=data["n_novel_classes"],
        latent_dim=data["latent_dim"],
        feature_shape=(data["feature_dim"], 1, 1),
        prototype_scale=data["prototype_scale"],
        shared_variation_scales=data["variation_scale"],
        seed=seed,
    )
    base = sample_dataset(spec, data["n_per_class_base"], SPLIT_BASE, seed)
    novel = sample_dataset(spec, data["n_per_class_novel"], SPLIT_NOVEL, seed)
    base_path = os.path.join(out_dir, "base.features.txt")
    novel_path = os.path.join(out_dir, "novel.features.txt")
    save_feature_file(base_path, base.flat_features(), base.labels)
    save_feature_file(novel_path, novel.flat_features(), novel.labels)
    _write_json(
        os.path.join(out_dir, "synth_manifest.json"),
        {
            "config_digest": config.digest,
            "seed": seed,
            "data": data,
            "base_file": base_path,
            "novel_file": novel_path,
            "base_labels": [0, data["n_base_classes"] - 1],
            "novel_labels": [
                data["n_base_classes"],
                data["n_base_classes"] + data["n_novel_classes"] - 1,
            ],
        },
    )
    print(f"wrote {base_path} ({len(base)} items) and {novel_path} ({len(novel)} items)")
    return 0


def _model_config_for(config: RunConfig, dataset: LabeledDataset) -> ModelConfig:
    if config.model["backbone"] != "identity":
        raise ConfigError(
            "the CLI drives precomputed feature files; only the identity backbone "
            "is supported here (use the library API for conv4 on images)"
        )
    dim = dataset.flat_features().shape[1]
    return ModelConfig(
        n_base_classes=len(dataset.class_labels()),
        backbone="identity",
        feature_shape=(dim, 1, 1),
        pooling=config.model["pooling"],
        encoder_channels=tuple(config.model["encoder_channels"]),
        log_var_clamp=config.model["log_var_clamp"],
    )


def _train_config_for(config: RunConfig, seed: int) -> TrainConfig:
    t = config.train
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        decay_epochs=tuple(t["decay_epochs"]),
        decay_factor=t["decay_factor"],
        alpha=t["alpha"],
        beta=t["beta"],
        seed=seed,
        weight_decay=t["weight_decay"],
        grad_clip=t["grad_clip"],
    )


def cmd_train(config: RunConfig, seed: int, out_dir: str, base_file=None) -> int:
    base_path = _require_file(base_file or config.data["base_file"], "base feature file")
    dataset = load_feature_file(base_path)
    model_config = _model_config_for(config, dataset)
    train_config = _train_config_for(config, seed)
    model = init_model(model_config, seed)
    model, history, state = train(dataset, model, train_config)
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    save_checkpoint(
        model, train_config, state, ckpt_path, history=history, config_digest=config.digest
    )
    history_path = os.path.join(out_dir, "history.jsonl")
    header = {
        "type": "header",
        "config_digest": config.digest,
        "seed": seed,
        "epochs": train_config.epochs,
        "batch_size": train_config.batch_size,
        "learning_rate": train_config.learning_rate,
        "alpha": train_config.alpha,
        "beta": train_config.beta,
        "n_base_classes": model_config.n_base_classes,
        "pooling": model_config.pooling,
    }
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"trained {train_config.epochs} epochs; wrote {ckpt_path} and {history_path}")
    return 0


def cmd_eval(
    config: RunConfig,
    seed: int,
    out_dir: str,
    checkpoint=None,
    novel_file=None,
    base_file=None,
    workers: int = 1,
) -> int:
    ckpt_path = _require_file(checkpoint, "checkpoint")
    novel_path = _require_file(novel_file or config.data["novel_file"], "novel feature file")
    model, _, _, payload = load_checkpoint(ckpt_path, expected_digest=config.digest)
    novel = load_feature_file(novel_path)
    ev = config.eval
    base_dataset = None
    needs_base = {"covariance-transfer", "no-disentanglement"} & set(ev["schemes"])
    if needs_base:
        base_path = _require_file(
            base_file or config.data["base_file"], "base feature file (for scheme state)"
        )
        base_dataset = load_feature_file(base_path)
    ledger_path = os.path.join(out_dir, "results.csv")
    if not os.path.exists(ledger_path):
        with open(ledger_path, "w", encoding="ascii") as fh:
            fh.write(LEDGER_HEADER + "\n")
    clf_config = ClassifierConfig(
        iterations=ev["clf_iterations"],
        batch_size=ev["clf_batch_size"],
        learning_rate=ev["clf_learning_rate"],
        k_neighbors=ev["k_neighbors"],
    )
    for kind in ev["schemes"]:
        scheme = prepare_scheme(
            kind,
            n_aug=ev["n_aug"],
            model=model,
            base_dataset=base_dataset,
            shrinkage=ev["shrinkage"],
            vae_train_config=TrainConfig(
                epochs=ev["vae_epochs"], decay_epochs=(), seed=seed
            ),
        )
        for classifier in ev["classifiers"]:
            report = run_benchmark(
                model,
                novel,
                scheme,
                classifier_kind=classifier,
                n_episodes=ev["n_episodes"],
                way=ev["way"],
                shot=ev["shot"],
                n_query=ev["n_query"],
                master_seed=seed,
                classifier_config=clf_config,
                workers=workers,
            )
            payload = report.to_dict()
            payload["config_digest"] = config.digest
            name = f"report_{kind}_{classifier}.json"
            _write_json(os.path.join(out_dir, name), payload)
            with open(ledger_path, "a", encoding="ascii") as fh:
                fh.write(report.ledger_row() + "\n")
            print(
                f"{kind}/{classifier}: {report.mean_accuracy:.2f} +/- {report.ci95:.2f} "
                f"({report.n_episodes} episodes)"
            )
    print(f"appended results to {ledger_path}")
    return 0


def cmd_augment(
    config: RunConfig,
    seed: int,
    out_path: str,
    checkpoint=None,
    input_file=None,
    base_file=None,
    scheme_kind: str = "posterior",
    n_aug: int | None = None,
    include_originals: bool = False,
) -> int:
    ckpt_path = _require_file(checkpoint, "checkpoint")
    in_path = _require_file(input_file, "input feature file")
    model, _, _, _ = load_checkpoint(ckpt_path, expected_digest=config.digest)
    dataset = load_feature_file(in_path)
    base_dataset = None
    if scheme_kind in ("covariance-transfer", "no-disentanglement"):
        base_path = _require_file(
            base_file or config.data["base_file"], "base feature file (for scheme state)"
        )
        base_dataset = load_feature_file(base_path)
    scheme = prepare_scheme(
        scheme_kind,
        n_aug=config.eval["n_aug"] if n_aug is None else n_aug,
        model=model,
        base_dataset=base_dataset,
        shrinkage=config.eval["shrinkage"],
        vae_train_config=TrainConfig(epochs=config.eval["vae_epochs"], decay_epochs=(), seed=seed),
    )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA6]))
    original_labels = _original_labels(dataset)
    augmented = augment_feature_set(model, dataset.features, original_labels, scheme, rng)
    keep = np.ones(len(augmented.labels), dtype=bool)
    if not include_originals:
        keep = augmented.is_augmented
    save_feature_file(out_path, augmented.features[keep], augmented.labels[keep])
    if scheme.covariance is not None:
        state_path = out_path + ".scheme.json"
        _write_json(
            state_path,
            {
                "config_digest": config.digest,
                "seed": seed,
                "kind": scheme.kind,
                "n_aug": scheme.n_aug,
                "shrinkage": scheme.covariance.shrinkage,
                "n_samples": scheme.covariance.n_samples,
                "sigma_hat": scheme.covariance.sigma_hat.tolist(),
            },
        )
    print(f"wrote {int(keep.sum())} features to {out_path}")
    return 0


def cmd_analyze(config: RunConfig, seed: int, out_dir: str, files) -> int:
    if not files:
        raise ConfigError("analyze needs at least one feature file")
    datasets = [(path, load_feature_file(_require_file(path, "feature file"))) for path in files]
    report = {"config_digest": config.digest, "seed": seed, "files": list(files)}
    per_file = {}
    for path, ds in datasets:
        labels = _original_labels(ds)
        per_file[path] = geom.geometry_report(ds.flat_features(), labels).to_dict()
    report["geometry"] = per_file
    if len(datasets) >= 2:
        aug_path, aug_ds = datasets[0]
        real_path, real_ds = datasets[1]
        report["retention"] = {
            "augmented_file": aug_path,
            "real_file": real_path,
            "fraction": geom.nn_class_retention(
                aug_ds.flat_features(),
                _original_labels(aug_ds),
                real_ds.flat_features(),
                _original_labels(real_ds),
            ),
        }
    all_feats = np.concatenate([ds.flat_features() for _, ds in datasets], axis=0)
    all_labels = np.concatenate([_original_labels(ds) for _, ds in datasets])
    coords = geom.project_2d(all_feats)
    proj_path = os.path.join(out_dir, "projection.csv")
    with open(proj_path, "w", encoding="ascii") as fh:
        fh.write("label,x,y\n")
        for label, (x, y) in zip(all_labels, coords):
            fh.write(f"{int(label)},{repr(float(x))},{repr(float(y))}\n")
    _write_json(os.path.join(out_dir, "analysis.json"), report)
    print(f"wrote {os.path.join(out_dir, 'analysis.json')} and {proj_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disentaug",
        description="Train a feature-disentanglement model, augment few-shot "
        "support sets, and evaluate the augmentation episodically.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1)

    p_synth = sub.add_parser("synth", help="generate synthetic base/novel feature files")
    common(p_synth)

    p_train = sub.add_parser("train", help="train the disentanglement model on base features")
    common(p_train)
    p_train.add_argument("--base-file", default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)

    p_eval = sub.add_parser("eval", help="episodic few-shot benchmark over schemes")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--novel-file", default=None)
    p_eval.add_argument("--base-file", default=None)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--way", type=int, default=None)
    p_eval.add_argument("--shot", type=int, default=None)
    p_eval.add_argument("--n-aug", type=int, default=None)
    p_eval.add_argument("--schemes", default=None, help=f"comma list of {SCHEME_KINDS}")
    p_eval.add_argument(
        "--classifiers", default=None, help=f"comma list of {CLASSIFIER_KINDS}"
    )

    p_aug = sub.add_parser("augment", help="export augmented features to a feature file")
    common(p_aug)
    p_aug.add_argument("--checkpoint", default=None)
    p_aug.add_argument("--input-file", default=None)
    p_aug.add_argument("--base-file", default=None)
    p_aug.add_argument("--scheme", default="posterior", choices=SCHEME_KINDS)
    p_aug.add_argument("--n-aug", type=int, default=None)
    p_aug.add_argument("--out", default=None, help="output feature file path")
    p_aug.add_argument("--include-originals", action="store_true")

    p_an = sub.add_parser("analyze", help="cluster-geometry metrics and 2-D projection")
    common(p_an)
    p_an.add_argument("files", nargs="*", help="feature files (augmented first, then real)")
    return parser


def _overrides_from(args) -> dict:
    pairs = {}
    if getattr(args, "epochs", None) is not None:
        pairs[("train", "epochs")] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        pairs[("train", "batch_size")] = args.batch_size
    if getattr(args, "episodes", None) is not None:
        pairs[("eval", "n_episodes")] = args.episodes
    if getattr(args, "way", None) is not None:
        pairs[("eval", "way")] = args.way
    if getattr(args, "shot", None) is not None:
        pairs[("eval", "shot")] = args.shot
    if getattr(args, "n_aug", None) is not None and args.command == "eval":
        pairs[("eval", "n_aug")] = args.n_aug
    if getattr(args, "schemes", None):
        pairs[("eval", "schemes")] = args.schemes.split(",")
    if getattr(args, "classifiers", None):
        pairs[("eval", "classifiers")] = args.classifiers.split(",")
    return pairs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, _overrides_from(args))
        os.makedirs(args.out_dir, exist_ok=True)
        if args.command == "synth":
            return cmd_synth(config, args.seed, args.out_dir)
        if args.command == "train":
            return cmd_train(config, args.seed, args.out_dir, base_file=args.base_file)
        if args.command == "eval":
            return cmd_eval(
                config,
                args.seed,
                args.out_dir,
                checkpoint=args.checkpoint,
                novel_file=args.novel_file,
                base_file=args.base_file,
                workers=args.workers,
            )
        if args.command == "augment":
            out_path = args.out or os.path.join(args.out_dir, "augmented.features.txt")
            return cmd_augment(
                config,
                args.seed,
                out_path,
                checkpoint=args.checkpoint,
                input_file=args.input_file,
                base_file=args.base_file,
                scheme_kind=args.scheme,
                n_aug=args.n_aug,
                include_originals=args.include_originals,
            )
        if args.command == "analyze":
            return cmd_analyze(config, args.seed, args.out_dir, args.files)
        raise ConfigError(f"unknown command {args.command}")
    except ToolkitError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error:internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
