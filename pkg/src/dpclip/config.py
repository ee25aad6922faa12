"""Flat, typed key-value experiment configuration.

A config file is a self-contained text document of ``key = value`` lines
(``#`` comments allowed).  Every field is declared below with its type and
default; unknown keys, type errors, and invalid values are reported with
the offending field named.  Nothing outside the file influences a run
except the output directory, which the CLI may override.
"""

from dataclasses import dataclass

from .errors import ConfigurationError


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text):
    t = text.strip()
    if not t:
        return ()
    return tuple(int(part) for part in t.split(","))


def _parse_opt_float(text):
    t = text.strip().lower()
    if t in ("", "none"):
        return None
    return float(t)


_PARSERS = {
    "str": lambda t: t.strip(),
    "int": lambda t: int(t.strip()),
    "float": lambda t: float(t.strip()),
    "bool": _parse_bool,
    "int_list": _parse_int_list,
    "opt_float": _parse_opt_float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    dataset: str = "blobs"                  # blobs | mnist | csv
    blobs_n: int = 2000
    blobs_dim: int = 16
    blobs_classes: int = 2
    blobs_separation: float = 8.0
    blobs_seed: int = 0
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    mnist_train_limit: int = 0              # 0 = use all training images
    csv_train: str = ""
    csv_test: str = ""
    normalize_mean: float | None = None
    normalize_std: float | None = None
    holdout_fraction: float = 0.2           # eval split for datasets without test files
    # model
    hidden: tuple = (32,)
    activation: str = "tanh"
    batchnorm: bool = False
    init: str = "uniform"                   # uniform | zeros
    # training
    eta0: float = 0.025
    eta_decay: float = 0.9
    sigma: float = 0.0
    epochs: int = 5
    batch_size: int = 64
    clip_mode: str = "bc"                   # ic | bc | gbc
    gbc_micro_batch_size: int = 0           # s for gbc mode
    clip_scope: str = "full"                # full | layerwise
    constant_strategy: str = "fixed"        # fixed | enhanced_alc | zhang_alc
    master_c: float = 1.0
    c_decay: float = 1.0
    sampling: str = "sh"                    # sh | ss
    noise_convention: str = "general"       # general | abadi
    public_fraction: float = 0.1
    seed: int = 0
    group_size: int = 1                     # neighboring-group size g in reports
    eval_every: int = 1                     # evaluate test accuracy every k epochs
    # attack
    attack_trials: int = 20000
    attack_position: int = 0
    # output
    out_dir: str = "out"


_FIELD_TYPES = {
    "dataset": "str",
    "blobs_n": "int",
    "blobs_dim": "int",
    "blobs_classes": "int",
    "blobs_separation": "float",
    "blobs_seed": "int",
    "mnist_train_images": "str",
    "mnist_train_labels": "str",
    "mnist_test_images": "str",
    "mnist_test_labels": "str",
    "mnist_train_limit": "int",
    "csv_train": "str",
    "csv_test": "str",
    "normalize_mean": "opt_float",
    "normalize_std": "opt_float",
    "holdout_fraction": "float",
    "hidden": "int_list",
    "activation": "str",
    "batchnorm": "bool",
    "init": "str",
    "eta0": "float",
    "eta_decay": "float",
    "sigma": "float",
    "epochs": "int",
    "batch_size": "int",
    "clip_mode": "str",
    "gbc_micro_batch_size": "int",
    "clip_scope": "str",
    "constant_strategy": "str",
    "master_c": "float",
    "c_decay": "float",
    "sampling": "str",
    "noise_convention": "str",
    "public_fraction": "float",
    "seed": "int",
    "group_size": "int",
    "eval_every": "int",
    "attack_trials": "int",
    "attack_position": "int",
    "out_dir": "str",
}

_CHOICES = {
    "dataset": ("blobs", "mnist", "csv"),
    "activation": ("relu", "tanh", "sigmoid"),
    "init": ("uniform", "zeros"),
    "clip_mode": ("ic", "bc", "gbc"),
    "clip_scope": ("full", "layerwise"),
    "constant_strategy": ("fixed", "enhanced_alc", "zhang_alc"),
    "sampling": ("sh", "ss"),
    "noise_convention": ("general", "abadi"),
}


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"{source}:{lineno}: unknown config field {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate config field {key!r}")
        parser = _PARSERS[_FIELD_TYPES[key]]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: field {key!r}: {exc}") from None
    config = ExperimentConfig(**values)
    _validate(config)
    return config


def parse_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def _validate(config):
    for name, choices in _CHOICES.items():
        if getattr(config, name) not in choices:
            raise ConfigurationError(
                f"field {name!r}: must be one of {choices}, got {getattr(config, name)!r}"
            )
    if config.batch_size < 1:
        raise ConfigurationError(f"field 'batch_size': must be >= 1, got {config.batch_size}")
    if config.clip_mode == "gbc":
        s = config.gbc_micro_batch_size
        if s < 1 or config.batch_size % s != 0:
            raise ConfigurationError(
                f"field 'gbc_micro_batch_size': must be >= 1 and divide "
                f"batch_size ({config.batch_size}), got {s}"
            )
    if not 0.0 < config.holdout_fraction < 1.0:
        raise ConfigurationError(
            f"field 'holdout_fraction': must be in (0, 1), got {config.holdout_fraction}"
        )
    if not 0.0 < config.public_fraction < 1.0:
        raise ConfigurationError(
            f"field 'public_fraction': must be in (0, 1), got {config.public_fraction}"
        )
    if config.group_size < 1:
        raise ConfigurationError(f"field 'group_size': must be >= 1, got {config.group_size}")
    if config.eval_every < 1:
        raise ConfigurationError(f"field 'eval_every': must be >= 1, got {config.eval_every}")
    if config.dataset == "mnist":
        for name in ("mnist_train_images", "mnist_train_labels",
                     "mnist_test_images", "mnist_test_labels"):
            if not getattr(config, name):
                raise ConfigurationError(f"field {name!r}: required when dataset = mnist")
    if config.dataset == "csv" and not config.csv_train:
        raise ConfigurationError("field 'csv_train': required when dataset = csv")
    if (config.normalize_mean is None) != (config.normalize_std is None):
        raise ConfigurationError(
            "fields 'normalize_mean'/'normalize_std': set both or neither"
        )


def micro_structure(config):
    """(s, m) from the configured clip mode and batch size."""
    if config.clip_mode == "ic":
        return 1, config.batch_size
    if config.clip_mode == "bc":
        return config.batch_size, 1
    s = config.gbc_micro_batch_size
    return s, config.batch_size // s

