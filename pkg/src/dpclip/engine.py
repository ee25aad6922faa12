"""Generalized differentially-private SGD.

One round: compute a gradient per micro-batch, clip each, sum, add Gaussian
noise, and take a step w <- w - eta * (U + n) / m.  Micro-batch structure
(s, m) selects the clipping flavor: s=1 clips individual per-sample
gradients, m=1 clips the aggregated batch gradient once, and anything in
between clips micro-batch gradients.  Step size and master clipping
constant decay once per epoch; adaptive layerwise constants are re-derived
from public data at every epoch start.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PerSampleGradientError
from .layered import LayeredVector, layer_norms, zeros_like
from . import clipping, network, sampling
from . import rng as rngmod

NOISE_CONVENTIONS = ("general", "abadi")
SAMPLING_MODES = ("sh", "ss")


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of one training run.

    ``s`` and ``m`` are the micro-batch size and count (batch size = s*m).
    ``sigma`` is the unitless noise multiplier; under the ``general``
    convention the per-round noise std is 2*C*sigma (or 2*C_h*sigma per
    clip group), under ``abadi`` it is sigma*C.
    """

    eta0: float
    epochs: int
    s: int
    m: int
    sigma: float = 0.0
    eta_decay: float = 1.0
    sampling: str = "sh"
    noise_convention: str = "general"
    clip: clipping.ClipSpec = field(default_factory=clipping.ClipSpec)
    seed: int = 0

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ConfigurationError(f"initial step size must be > 0, got {self.eta0}")
        if not 0.0 < self.eta_decay <= 1.0:
            raise ConfigurationError(f"eta_decay must be in (0, 1], got {self.eta_decay}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.s < 1 or self.m < 1:
            raise ConfigurationError(f"micro-batch size s={self.s} and count m={self.m} must be >= 1")
        if self.sigma < 0:
            raise ConfigurationError(f"noise multiplier must be >= 0, got {self.sigma}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")
        if self.noise_convention not in NOISE_CONVENTIONS:
            raise ConfigurationError(
                f"noise convention must be one of {NOISE_CONVENTIONS}, got {self.noise_convention!r}"
            )
        if self.clip.mode == "ic" and self.s != 1:
            raise ConfigurationError(f"individual clipping requires s=1, got s={self.s}")
        if self.clip.mode == "bc" and self.m != 1:
            raise ConfigurationError(f"batch clipping requires m=1, got m={self.m}")

    @property
    def batch_size(self):
        return self.s * self.m


@dataclass(frozen=True)
class NoiseSpec:
    """Per-clip-group Gaussian noise standard deviations."""

    stds: tuple
    partition: tuple  # tuple of tuples of layer indices, one per group

    def __post_init__(self):
        if any(sd < 0 for sd in self.stds):
            raise ConfigurationError(f"noise stds must all be >= 0, got {self.stds}")
        if len(self.stds) != len(self.partition):
            raise ConfigurationError(
                f"{len(self.stds)} stds for {len(self.partition)} noise groups"
            )


@dataclass(frozen=True)
class RoundRecord:
    epoch: int
    round_index: int
    loss: float
    eta: float
    constants: tuple
    noise_stds: tuple
    pre_clip_layer_norms: tuple
    post_clip_layer_norms: tuple


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    eta: float
    master_c: float
    constants: tuple
    mean_loss: float
    eval_accuracy: float | None = None
    norm_estimates: tuple | None = None


@dataclass(frozen=True)
class TrainResult:
    weights: LayeredVector
    records: list
    epoch_records: list
    bn_state: object
    accountant_inputs: dict


def noise_spec_for(config, constants, num_layers):
    """Noise stds for one round given the resolved clipping constants."""
    factor = 2.0 * config.sigma if config.noise_convention == "general" else config.sigma
    if config.clip.scope == "full":
        partition = (tuple(range(num_layers)),)
        stds = (factor * float(constants),)
    else:
        partition = tuple(
            tuple(g) for g in clipping.groups_partition(num_layers, config.clip.layer_groups)
        )
        stds = tuple(factor * float(c) for c in np.asarray(constants))
    return NoiseSpec(stds=stds, partition=partition)


def noise_draw(spec, layer_dims, rng):
    """Independent zero-mean Gaussian noise, one std per clip group."""
    out = [None] * len(layer_dims)
    for sd, members in zip(spec.stds, spec.partition):
        for h in members:
            if sd == 0.0:
                out[h] = np.zeros(layer_dims[h])
            else:
                out[h] = rng.normal(0.0, sd, size=layer_dims[h])
    if any(a is None for a in out):
        raise ConfigurationError("noise partition does not cover every layer")
    return LayeredVector(out)


def round_update(weights, u, noise, eta, m):
    """w <- w - eta * (U + n) / m (the division by m applies even for m=1)."""
    ubar = u if noise is None else u + noise
    return weights - ubar * (eta / float(m))


def _micro_batch_grads(config, model, weights, X, y, plan, b, bn_state):
    """Per-micro-batch gradients a_1..a_m for round b, plus the round loss."""
    if config.s == 1:
        batch = network.Batch(X[plan.batch(b)], y[plan.batch(b)])
        grads = network.grad_per_sample(model, weights, batch)
        logits = network.forward(model, weights, batch)
        round_loss = network.loss(logits, batch.labels)
        return grads, round_loss
    grads = []
    losses = []
    for h in range(plan.m):
        idx = plan.indices[b, h]
        micro = network.Batch(X[idx], y[idx])
        g, value, bn_stats = network._grad_batch_full(model, weights, micro)
        if bn_state is not None:
            bn_state.update_all(bn_stats)
        grads.append(g)
        losses.append(value)
    return grads, float(np.mean(losses))


def dpsgd_general(
    config,
    model,
    train_data,
    public_data=None,
    eval_data=None,
    initial_weights=None,
    record_norm_estimates=False,
    eval_every=1,
):
    """Run generalized DP-SGD and return the trained weights plus full logs.

    ``train_data`` and the optional ``public_data`` / ``eval_data`` are
    :class:`network.Batch` values.  Adaptive constant strategies require
    public data.  The run is a pure function of (config, data): identical
    seeds reproduce the round records exactly.
    """
    if not isinstance(train_data, network.Batch):
        raise ConfigurationError("train_data must be a Batch")
    n_train = train_data.size
    if config.batch_size > n_train:
        raise ConfigurationError(
            f"batch size s*m = {config.batch_size} exceeds training set size {n_train}"
        )
    if config.s == 1 and model.has_batchnorm:
        raise PerSampleGradientError(
            "per-sample gradients undefined under batch statistics: individual "
            "clipping (s=1) cannot train a batchnorm model (use BC or remove batchnorm)"
        )
    needs_public = config.clip.constant_strategy != "fixed" or record_norm_estimates
    if needs_public and public_data is None:
        raise ConfigurationError(
            f"constant strategy {config.clip.constant_strategy!r} requires a public dataset"
        )

    X, y = train_data.inputs, train_data.labels
    weights = initial_weights if initial_weights is not None else network.init_weights(model, config.seed)
    bn_state = network.BatchNormState(model) if model.has_batchnorm else None
    num_layers = model.num_param_layers
    if config.clip.scope == "layerwise":
        num_groups = len(clipping.groups_partition(num_layers, config.clip.layer_groups))
    else:
        num_groups = 1

    records = []
    epoch_records = []
    for epoch in range(1, config.epochs + 1):
        # closed-form schedules: eta0 * decay^(e-1), immune to iterative rounding drift
        eta = config.eta0 * config.eta_decay ** (epoch - 1)
        master_c = config.clip.master_c * config.clip.c_decay ** (epoch - 1)
        if config.clip.scope == "full":
            constants = master_c
            constants_tuple = (float(master_c),)
        elif config.clip.constant_strategy == "fixed":
            constants = np.full(num_groups, master_c)
            constants_tuple = tuple(float(c) for c in constants)
        elif config.clip.constant_strategy == "enhanced_alc":
            constants = clipping.alc_constants(
                model, weights, public_data, master_c, config.clip.layer_groups
            )
            constants_tuple = tuple(float(c) for c in constants)
        else:
            constants = clipping.zhang_constants(
                model, weights, public_data, config.clip.layer_groups
            )
            constants_tuple = tuple(float(c) for c in constants)

        estimates = None
        if record_norm_estimates:
            estimates = tuple(
                float(v) for v in clipping.layer_norm_estimates(model, weights, public_data)
            )

        if config.sampling == "sh":
            plan = sampling.shuffle_partition(
                n_train, config.s, config.m, rngmod.stream(config.seed, "shuffle", epoch), epoch
            )
        else:
            rounds = n_train // config.batch_size
            plan = sampling.subsample(
                n_train, config.s, config.m, rounds,
                rngmod.stream(config.seed, "subsample", epoch), epoch,
            )

        noise_spec = noise_spec_for(config, constants, num_layers)

        epoch_losses = []
        for b in range(plan.rounds):
            grads, round_loss = _micro_batch_grads(config, model, weights, X, y, plan, b, bn_state)
            mean_grad = zeros_like(grads[0])
            for g in grads:
                mean_grad = mean_grad + g
            mean_grad = mean_grad * (1.0 / config.m)
            u = clipping.aggregate_clipped(grads, config.clip, constants)
            if config.sigma > 0:
                noise = noise_draw(
                    noise_spec, weights.layer_dims(), rngmod.stream(config.seed, "noise", epoch, b)
                )
            else:
                noise = None
            weights = round_update(weights, u, noise, eta, config.m)
            records.append(
                RoundRecord(
                    epoch=epoch,
                    round_index=b + 1,
                    loss=round_loss,
                    eta=eta,
                    constants=constants_tuple,
                    noise_stds=noise_spec.stds,
                    pre_clip_layer_norms=tuple(layer_norms(mean_grad)),
                    post_clip_layer_norms=tuple(layer_norms(u * (1.0 / config.m))),
                )
            )
            epoch_losses.append(round_loss)

        eval_accuracy = None
        if eval_data is not None and epoch % eval_every == 0:
            eval_accuracy = network.evaluate_accuracy(model, weights, eval_data, bn_state)
        epoch_records.append(
            EpochRecord(
                epoch=epoch,
                eta=eta,
                master_c=master_c,
                constants=constants_tuple,
                mean_loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                eval_accuracy=eval_accuracy,
                norm_estimates=estimates,
            )
        )

    accountant_inputs = {
        "g": 1,
        "epochs": config.epochs,
        "sigma": config.sigma,
        "layerwise": config.clip.scope == "layerwise",
        "num_groups": num_groups,
        "n_train": n_train,
        "batch_size": config.batch_size,
        "noise_convention": config.noise_convention,
    }
    return TrainResult(
        weights=weights,
        records=records,
        epoch_records=epoch_records,
        bn_state=bn_state,
        accountant_inputs=accountant_inputs,
    )
