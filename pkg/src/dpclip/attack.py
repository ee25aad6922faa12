"""Empirical hypothesis-testing audit of a mechanism's privacy.

The harness runs a mechanism many times on two neighboring datasets,
projects each output onto the direction separating the two output means,
sweeps a decision threshold over the pooled projections, and records the
achieved (Type I, Type II) error pairs.  The resulting empirical trade-off
curve is compared against the accountant's theoretical curve: it must not
fall below the claimed curve (a violation would refute the guarantee), and
because the Gaussian analysis is tight it should also match the claim
within sampling slack.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from . import clipping, engine, network

MIN_TRIALS = 1000


@dataclass(frozen=True)
class MechanismUnderTest:
    """A procedure mapping (dataset, noise_seed) -> real vector, deterministic
    for fixed arguments, with its declared per-round sensitivity."""

    run: callable
    sensitivity: object
    differing_micro_batch: int | None = None


@dataclass(frozen=True)
class EmpiricalCurve:
    """Measured (alpha_hat, beta_hat) pairs, one per decision threshold,
    sorted by alpha_hat; ``half_width`` is the per-CDF confidence bound."""

    thresholds: np.ndarray
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    trials: int
    half_width: float
    degenerate: bool = False

    def __post_init__(self):
        a = np.asarray(self.alpha_hat, dtype=np.float64)
        b = np.asarray(self.beta_hat, dtype=np.float64)
        t = np.asarray(self.thresholds, dtype=np.float64)
        object.__setattr__(self, "alpha_hat", a)
        object.__setattr__(self, "beta_hat", b)
        object.__setattr__(self, "thresholds", t)
        if not (a.shape == b.shape == t.shape):
            raise ConfigurationError("thresholds, alpha_hat, beta_hat must align")
        if a.size and (a.min() < 0 or a.max() > 1 or b.min() < 0 or b.max() > 1):
            raise ConfigurationError("error rates must lie in [0, 1]")
        if np.any(np.diff(a) < 0):
            raise ConfigurationError("pairs must be sorted by alpha_hat")


def dkw_half_width(trials, gamma=0.01):
    """Distribution-free bound sqrt(ln(2/gamma) / (2*trials)) on the sup
    deviation of an empirical CDF, at confidence 1 - gamma."""
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    return math.sqrt(math.log(2.0 / gamma) / (2.0 * trials))


def neighboring_pair(data, index, replacement):
    """Replace the sample(s) at ``index`` to form a same-size neighbor.

    Works on plain arrays (rows are samples) and on labeled Batches, where
    ``replacement`` is an ``(inputs, label)`` pair.  A sequence of indices
    with matching replacements yields a group-of-g neighbor.
    """
    if isinstance(data, network.Batch):
        x_rep, y_rep = replacement
        inputs = neighboring_pair(data.inputs, index, x_rep)[1]
        labels = neighboring_pair(data.labels, index, y_rep)[1]
        return data, network.Batch(inputs, labels)
    arr = np.asarray(data)
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    if idx.size and (idx.min() < -arr.shape[0] or idx.max() >= arr.shape[0]):
        raise IndexError(f"index {index} out of range for {arr.shape[0]} samples")
    other = arr.copy()
    other[idx] = replacement
    return arr, other


def empirical_tradeoff(mech, d, d_prime, trials, rng):
    """Estimate the trade-off curve of ``mech`` between datasets d and d'.

    Runs the mechanism ``trials`` times on each dataset with independent
    noise seeds, projects outputs onto the unit vector from the d output
    mean to the d' output mean, and sweeps all thresholds.  If the two
    output means coincide exactly the curve is flagged degenerate and an
    arbitrary fixed direction is used.
    """
    if trials < MIN_TRIALS:
        raise ConfigurationError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    seeds = rng.integers(0, 2 ** 62, size=2 * trials)
    out_d = np.stack([np.asarray(mech.run(d, int(s)), dtype=np.float64) for s in seeds[:trials]])
    out_dp = np.stack([np.asarray(mech.run(d_prime, int(s)), dtype=np.float64) for s in seeds[trials:]])
    direction = out_dp.mean(axis=0) - out_d.mean(axis=0)
    norm = np.linalg.norm(direction)
    degenerate = bool(norm == 0.0)
    if degenerate:
        direction = np.zeros_like(direction)
        direction[0] = 1.0
    else:
        direction = direction / norm
    s0 = np.sort(out_d @ direction)
    s1 = np.sort(out_dp @ direction)
    ts = np.concatenate(([-np.inf], np.unique(np.concatenate([s0, s1])), [np.inf]))
    # reject H0 (guess d') when the projection exceeds the threshold
    alpha = 1.0 - np.searchsorted(s0, ts, side="right") / trials
    beta = np.searchsorted(s1, ts, side="right") / trials
    order = np.argsort(alpha, kind="stable")
    return EmpiricalCurve(
        thresholds=ts[order],
        alpha_hat=alpha[order],
        beta_hat=beta[order],
        trials=trials,
        half_width=dkw_half_width(trials),
        degenerate=degenerate,
    )


def _inverse_at(curve, beta):
    """alpha at which the (non-increasing) curve attains the given beta."""
    return np.interp(beta, curve.values[::-1], curve.alphas[::-1])


def _signed_gaps(empirical, theoretical):
    """Signed offset of each recorded pair from the claimed curve, positive
    above it, measured along whichever axis gives the smaller magnitude.

    Near a Gaussian curve's steep end a vertical offset amplifies tiny
    alpha-side sampling noise by the curve's slope while the horizontal
    offset stays at sampling scale (and vice versa near the flat end), so
    the per-pair deviation is the gentler of the two.
    """
    vertical = empirical.beta_hat - theoretical.at(empirical.alpha_hat)
    horizontal = empirical.alpha_hat - _inverse_at(theoretical, empirical.beta_hat)
    return np.where(np.abs(horizontal) < np.abs(vertical), horizontal, vertical)


def sup_distance(empirical, theoretical):
    """Largest deviation of any recorded pair from the claimed curve."""
    return float(np.abs(_signed_gaps(empirical, theoretical)).max())


@dataclass(frozen=True)
class DominationVerdict:
    passed: bool
    dominates: bool
    max_violation: float
    sup_distance: float
    slack: float


def verify_domination(empirical, theoretical, slack=None):
    """Check the empirical curve against a claimed trade-off curve.

    ``dominates`` holds iff no recorded pair falls more than ``slack``
    below the claimed curve (the mechanism is at least as private as
    claimed).  The overall ``passed`` verdict additionally requires the
    curve to match the claim within the same slack, since the Gaussian
    guarantees under test are tight descriptions, not loose bounds.
    Deviations are measured per :func:`sup_distance`; default slack is
    twice the DKW half-width (one per empirical CDF).
    """
    if slack is None:
        slack = 2.0 * empirical.half_width
    gaps = _signed_gaps(empirical, theoretical)
    max_violation = float((-gaps).max())
    dominates = bool(max_violation <= slack)
    distance = float(np.abs(gaps).max())
    return DominationVerdict(
        passed=dominates and distance <= slack,
        dominates=dominates,
        max_violation=max_violation,
        sup_distance=distance,
        slack=float(slack),
    )


def single_round_mech(model, weights, config, constants=None, differing_micro_batch=None):
    """Wrap one engine round (clip, aggregate, add noise) as a mechanism.

    The dataset is the round's input :class:`network.Batch` of exactly
    s*m samples; the output is the flattened noised update U + n.  Requires
    sigma > 0 (there is no privacy to audit otherwise).  ``constants``
    resolves the clipping bounds; default is the configured master constant
    (per group under layerwise scope).
    """
    if not config.sigma > 0:
        raise ConfigurationError("single-round audit requires sigma > 0 (no DP to test)")
    if config.s == 1 and model.has_batchnorm:
        raise ConfigurationError(
            "individual clipping cannot audit a batchnorm model (use BC or remove batchnorm)"
        )
    num_layers = model.num_param_layers
    if constants is None:
        if config.clip.scope == "full":
            constants = config.clip.master_c
        else:
            groups = clipping.groups_partition(num_layers, config.clip.layer_groups)
            constants = np.full(len(groups), config.clip.master_c)
    noise_spec = engine.noise_spec_for(config, constants, num_layers)
    layer_dims = weights.layer_dims()

    def run(batch, noise_seed):
        if not isinstance(batch, network.Batch) or batch.size != config.batch_size:
            raise ConfigurationError(
                f"round input must be a Batch of exactly {config.batch_size} samples"
            )
        if config.s == 1:
            grads = network.grad_per_sample(model, weights, batch)
        else:
            grads = []
            for h in range(config.m):
                sl = slice(h * config.s, (h + 1) * config.s)
                grads.append(
                    network.grad_batch(
                        model, weights, network.Batch(batch.inputs[sl], batch.labels[sl])
                    )
                )
        u = clipping.aggregate_clipped(grads, config.clip, constants)
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(noise_seed))))
        noise = engine.noise_draw(noise_spec, layer_dims, gen)
        return (u + noise).flatten()

    if config.clip.scope == "full":
        sensitivity = 2.0 * float(constants)
    else:
        sensitivity = 2.0 * np.asarray(constants, dtype=np.float64)
    return MechanismUnderTest(
        run=run, sensitivity=sensitivity, differing_micro_batch=differing_micro_batch
    )


def write_curve_csv(curve, path):
    """Write the curve as CSV with columns threshold, alpha_hat, beta_hat."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "alpha_hat", "beta_hat"])
        for t, a, b in zip(curve.thresholds, curve.alpha_hat, curve.beta_hat):
            writer.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
