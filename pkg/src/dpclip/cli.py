"""Experiment runner CLI.

Subcommands: ``run`` trains per a config file and writes metrics CSV, a
round-record log, and a privacy report; ``profile`` logs per-epoch
layerwise gradient-norm estimates; ``attack`` audits one noised round
empirically against the theoretical trade-off curve; ``account`` answers
direct accountant queries.  A run's outputs are a pure function of the
config file and seed.
"""

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import accountant, attack, clipping, config as configmod, datasets, engine, network
from . import rng as rngmod
from .errors import ConfigurationError, IdxFormatError, PerSampleGradientError
from .sampling import SplitSpec, split_public

METRICS_HEADER = ["epoch", "train_loss", "test_accuracy", "eta", "master_c",
                  "ch_min", "ch_max", "mu"]
PROFILE_HEADER = ["epoch", "layer", "estimate"]


def _check_exists(path, field_name):
    if not os.path.exists(path):
        raise ConfigurationError(f"field {field_name!r}: file not found: {path}")


def _load_dataset(cfg):
    """(train_X, train_y, test_X, test_y) with labels remapped to 0..k-1."""
    if cfg.dataset == "blobs":
        X, y = datasets.synth_blobs(
            cfg.blobs_n, cfg.blobs_dim, cfg.blobs_classes, cfg.blobs_separation, cfg.blobs_seed
        )
        n_train = int(round(X.shape[0] * (1.0 - cfg.holdout_fraction)))
        train = (X[:n_train], y[:n_train])
        test = (X[n_train:], y[n_train:])
    elif cfg.dataset == "mnist":
        for field_name in ("mnist_train_images", "mnist_train_labels",
                           "mnist_test_images", "mnist_test_labels"):
            _check_exists(getattr(cfg, field_name), field_name)
        X, y = datasets.load_mnist_idx(cfg.mnist_train_images, cfg.mnist_train_labels)
        if cfg.mnist_train_limit > 0:
            X, y = X[:cfg.mnist_train_limit], y[:cfg.mnist_train_limit]
        train = (X, y)
        test = datasets.load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels)
    else:
        _check_exists(cfg.csv_train, "csv_train")
        X, y = datasets.load_csv_dataset(cfg.csv_train)
        if cfg.csv_test:
            _check_exists(cfg.csv_test, "csv_test")
            train = (X, y)
            test = datasets.load_csv_dataset(cfg.csv_test)
        else:
            n_train = int(round(X.shape[0] * (1.0 - cfg.holdout_fraction)))
            train = (X[:n_train], y[:n_train])
            test = (X[n_train:], y[n_train:])

    if cfg.normalize_mean is not None:
        train = (datasets.normalize(train[0], cfg.normalize_mean, cfg.normalize_std), train[1])
        test = (datasets.normalize(test[0], cfg.normalize_mean, cfg.normalize_std), test[1])

    classes = np.unique(np.concatenate([train[1], test[1]]))
    remap = {c: i for i, c in enumerate(classes)}
    train_y = np.array([remap[c] for c in train[1]], dtype=np.int64)
    test_y = np.array([remap[c] for c in test[1]], dtype=np.int64)
    return train[0], train_y, test[0], test_y, classes.size


def _train_config(cfg):
    s, m = configmod.micro_structure(cfg)
    spec = clipping.ClipSpec(
        mode=cfg.clip_mode,
        scope=cfg.clip_scope,
        master_c=cfg.master_c,
        c_decay=cfg.c_decay,
        constant_strategy=cfg.constant_strategy,
    )
    return engine.TrainConfig(
        eta0=cfg.eta0,
        epochs=cfg.epochs,
        s=s,
        m=m,
        sigma=cfg.sigma,
        eta_decay=cfg.eta_decay,
        sampling=cfg.sampling,
        noise_convention=cfg.noise_convention,
        clip=spec,
        seed=cfg.seed,
    )


def _prepare(cfg, need_public):
    train_X, train_y, test_X, test_y, n_classes = _load_dataset(cfg)
    model = network.mlp(
        train_X.shape[1], cfg.hidden, n_classes,
        activation=cfg.activation, batchnorm=cfg.batchnorm,
    )
    weights = network.init_weights(model, cfg.seed, scheme=cfg.init)
    public_batch = None
    if need_public:
        train_idx, public_idx = split_public(
            train_X.shape[0], SplitSpec(cfg.public_fraction, seed=cfg.seed)
        )
        public_batch = network.Batch(train_X[public_idx], train_y[public_idx])
        train_batch = network.Batch(train_X[train_idx], train_y[train_idx])
    else:
        train_batch = network.Batch(train_X, train_y)
    eval_batch = network.Batch(test_X, test_y)
    return model, weights, train_batch, public_batch, eval_batch


def _write_csv(path, header, rows):
    import csv as csvmod

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _guarantee(cfg, inputs, epochs):
    return accountant.framework_guarantee(
        g=cfg.group_size,
        epochs=epochs,
        sigma=inputs["sigma"],
        layers=inputs["num_groups"],
        layerwise=inputs["layerwise"],
    )


def run_experiment(config_path, out_dir=None, seed=None, epochs=None):
    """Execute one configured training run; returns the process exit code.

    Outputs (written only after the run completes, so a failed run leaves
    no partial files): metrics.csv, rounds.jsonl, privacy.json.
    """
    try:
        cfg = _apply_overrides(configmod.parse_config(config_path), out_dir, seed, epochs)
        tc = _train_config(cfg)
        need_public = cfg.constant_strategy != "fixed"
        model, weights, train_batch, public_batch, eval_batch = _prepare(cfg, need_public)
        result = engine.dpsgd_general(
            tc, model, train_batch,
            public_data=public_batch, eval_data=eval_batch, initial_weights=weights,
            eval_every=cfg.eval_every,
        )
    except (ConfigurationError, IdxFormatError, OSError) as exc:
        _report_error(exc)
        return 2

    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = []
    for rec in result.epoch_records:
        mu = _guarantee(cfg, result.accountant_inputs, rec.epoch).mu
        rows.append([
            rec.epoch,
            _fmt(rec.mean_loss),
            _fmt(rec.eval_accuracy),
            _fmt(rec.eta),
            _fmt(rec.master_c),
            _fmt(min(rec.constants)),
            _fmt(max(rec.constants)),
            _fmt(mu),
        ])
    _write_csv(os.path.join(cfg.out_dir, "metrics.csv"), METRICS_HEADER, rows)

    with open(os.path.join(cfg.out_dir, "rounds.jsonl"), "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(json.dumps(dataclasses.asdict(rec), sort_keys=True) + "\n")

    report = _guarantee(cfg, result.accountant_inputs, cfg.epochs)
    with open(os.path.join(cfg.out_dir, "privacy.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    return 0


def gradient_norm_profile(config_path, out_dir=None, seed=None, epochs=None):
    """Train per the config while logging per-epoch, per-layer gradient-norm
    estimates over the public split; writes profile.csv (E*L rows)."""
    try:
        cfg = _apply_overrides(configmod.parse_config(config_path), out_dir, seed, epochs)
        tc = _train_config(cfg)
        model, weights, train_batch, public_batch, eval_batch = _prepare(cfg, need_public=True)
        result = engine.dpsgd_general(
            tc, model, train_batch,
            public_data=public_batch, eval_data=None, initial_weights=weights,
            record_norm_estimates=True,
        )
    except (ConfigurationError, IdxFormatError, OSError) as exc:
        _report_error(exc)
        return 2

    os.makedirs(cfg.out_dir, exist_ok=True)
    names = model.layer_names()
    rows = []
    for rec in result.epoch_records:
        for name, value in zip(names, rec.norm_estimates):
            rows.append([rec.epoch, name, _fmt(value)])
    _write_csv(os.path.join(cfg.out_dir, "profile.csv"), PROFILE_HEADER, rows)
    return 0


def run_attack(config_path, out_dir=None, seed=None, epochs=None):
    """Audit one noised training round on a neighboring batch pair; writes
    attack_curve.csv and attack_report.json."""
    try:
        cfg = _apply_overrides(configmod.parse_config(config_path), out_dir, seed, epochs)
        tc = _train_config(cfg)
        if tc.sigma <= 0:
            raise ConfigurationError("attack requires sigma > 0 (no DP to test)")
        model, weights, train_batch, _, _ = _prepare(cfg, need_public=False)
        if train_batch.size < tc.batch_size + 1:
            raise ConfigurationError(
                f"attack needs at least batch_size+1 = {tc.batch_size + 1} training samples"
            )
        pos = cfg.attack_position
        if not 0 <= pos < tc.batch_size:
            raise ConfigurationError(
                f"field 'attack_position': must be in [0, {tc.batch_size}), got {pos}"
            )
        base = network.Batch(
            train_batch.inputs[: tc.batch_size], train_batch.labels[: tc.batch_size]
        )
        target_label = base.labels[pos]
        candidates = np.nonzero(train_batch.labels[tc.batch_size:] != target_label)[0]
        if candidates.size == 0:
            raise ConfigurationError("no replacement sample with a different label available")
        j = tc.batch_size + int(candidates[0])
        replacement = (train_batch.inputs[j], int(train_batch.labels[j]))
        d, d_prime = attack.neighboring_pair(base, pos, replacement)

        mech = attack.single_round_mech(
            model, weights, tc, differing_micro_batch=pos // tc.s
        )
        curve = attack.empirical_tradeoff(
            mech, d, d_prime, cfg.attack_trials, rngmod.stream(cfg.seed, "attack")
        )
        if tc.clip.scope == "layerwise":
            groups = len(clipping.groups_partition(model.num_param_layers))
            mu = math.sqrt(groups) / tc.sigma
        else:
            mu = 1.0 / tc.sigma
        theoretical = accountant.gaussian_tradeoff(mu)
        verdict = attack.verify_domination(curve, theoretical)
    except (ConfigurationError, IdxFormatError, OSError) as exc:
        _report_error(exc)
        return 2

    os.makedirs(cfg.out_dir, exist_ok=True)
    attack.write_curve_csv(curve, os.path.join(cfg.out_dir, "attack_curve.csv"))
    payload = {
        "mu_claimed": mu,
        "trials": curve.trials,
        "degenerate": curve.degenerate,
        "dominates": verdict.dominates,
        "max_violation": verdict.max_violation,
        "sup_distance": verdict.sup_distance,
        "slack": verdict.slack,
        "passed": verdict.passed,
    }
    with open(os.path.join(cfg.out_dir, "attack_report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True) + "\n")
    return 0


def run_account(args):
    try:
        report = accountant.framework_guarantee(
            g=args.g, epochs=args.epochs, sigma=args.sigma,
            layers=args.layers, layerwise=args.layerwise,
        )
        payload = json.loads(report.to_json())
        if args.clt_n is not None or args.clt_m is not None:
            if args.clt_n is None or args.clt_m is None:
                raise ConfigurationError("--clt-n and --clt-m must be given together")
            sigma = args.sigma
            if args.layerwise:
                sigma = accountant.layerwise_effective_sigma(sigma, args.layers)
            payload["clt_mu"] = accountant.clt_mu(args.clt_n, args.clt_m, args.epochs, sigma)
    except (ConfigurationError, OverflowError) as exc:
        _report_error(exc)
        return 2
    text = json.dumps(payload, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _apply_overrides(cfg, out_dir, seed, epochs):
    updates = {}
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if seed is not None:
        updates["seed"] = seed
    if epochs is not None:
        updates["epochs"] = epochs
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _report_error(exc):
    hint = ""
    if isinstance(exc, PerSampleGradientError):
        hint = " (use BC or remove batchnorm)"
    print(f"error: {exc}{hint}", file=sys.stderr)


def _add_common(parser):
    parser.add_argument("config", help="path to the experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None, help="override the output directory")
    parser.add_argument("--epochs", type=int, default=None, help="override the epoch count")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dpclip", description="differentially private SGD experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="train per the config and write metrics"))
    _add_common(sub.add_parser("profile", help="log per-epoch layerwise gradient norms"))
    _add_common(sub.add_parser("attack", help="audit one round against its trade-off curve"))

    acc = sub.add_parser("account", help="direct accountant queries")
    acc.add_argument("--g", type=int, default=1, help="neighboring-group size")
    acc.add_argument("--epochs", type=int, required=True)
    acc.add_argument("--sigma", type=float, required=True)
    acc.add_argument("--layers", type=int, default=1)
    acc.add_argument("--layerwise", action="store_true")
    acc.add_argument("--clt-n", type=int, default=None, help="dataset size for the CLT estimate")
    acc.add_argument("--clt-m", type=int, default=None, help="batch size for the CLT estimate")
    acc.add_argument("--out", default=None, help="also write the report JSON to this file")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, args.out_dir, args.seed, args.epochs)
    if args.command == "profile":
        return gradient_norm_profile(args.config, args.out_dir, args.seed, args.epochs)
    if args.command == "attack":
        return run_attack(args.config, args.out_dir, args.seed, args.epochs)
    return run_account(args)


if __name__ == "__main__":
    sys.exit(main())
