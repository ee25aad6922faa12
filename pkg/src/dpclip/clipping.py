"""Gradient clipping operators and clipping-constant derivation.

The basic operator is [x]_C = x / max(1, ||x||/C).  It can act on the full
concatenated gradient, on each layer part separately, or on groups of
layers.  Layerwise constants are either fixed, derived from public-data
gradient-norm estimates scaled to a master constant (C_h = C * e_h / max e),
or used raw (C_h = e_h).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .layered import LayeredVector, zeros_like
from . import network

CLIP_MODES = ("ic", "bc", "gbc")
CLIP_SCOPES = ("full", "layerwise")
CONSTANT_STRATEGIES = ("fixed", "enhanced_alc", "zhang_alc")

# Micro-batch size used to estimate layer norms when per-sample gradients
# are unavailable (batchnorm models).
NORM_PROXY_BATCH = 8


@dataclass(frozen=True)
class ClipSpec:
    """How gradients are clipped in one training run.

    ``mode`` names the micro-batch structure (ic: s=1, bc: m=1, gbc: free);
    ``scope`` chooses one constant for the whole vector or one per clip
    group; ``layer_groups`` optionally maps parameter layers to joint clip
    groups (default: every layer is its own group under layerwise scope).
    """

    mode: str = "gbc"
    scope: str = "full"
    master_c: float = 1.0
    c_decay: float = 1.0
    constant_strategy: str = "fixed"
    layer_groups: tuple | None = None

    def __post_init__(self):
        if self.mode not in CLIP_MODES:
            raise ConfigurationError(f"clip mode must be one of {CLIP_MODES}, got {self.mode!r}")
        if self.scope not in CLIP_SCOPES:
            raise ConfigurationError(f"clip scope must be one of {CLIP_SCOPES}, got {self.scope!r}")
        if self.constant_strategy not in CONSTANT_STRATEGIES:
            raise ConfigurationError(
                f"constant strategy must be one of {CONSTANT_STRATEGIES}, "
                f"got {self.constant_strategy!r}"
            )
        if not self.master_c > 0:
            raise ConfigurationError(f"master clipping constant must be > 0, got {self.master_c}")
        if not 0.0 < self.c_decay <= 1.0:
            raise ConfigurationError(f"c_decay must be in (0, 1], got {self.c_decay}")
        if self.constant_strategy != "fixed" and self.scope != "layerwise":
            raise ConfigurationError(
                f"adaptive constant strategy {self.constant_strategy!r} requires layerwise scope"
            )


@dataclass(frozen=True)
class MultiplierSpec:
    """Per-layer multiplication factors plus the overall constant for
    full-gradient clipping of the rescaled vector."""

    factors: tuple
    c: float

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))
        if any(f < 1.0 for f in self.factors):
            raise ConfigurationError(f"multiplication factors must all be >= 1, got {self.factors}")
        if not self.c > 0:
            raise ConfigurationError(f"clipping constant must be > 0, got {self.c}")


def _group_norm(arrays):
    return float(np.sqrt(sum(float(a @ a) for a in arrays)))


def _clip_arrays(arrays, c):
    """Jointly scale ``arrays`` so their concatenated norm is <= c.

    Exact contraction and idempotence: inputs already within the bound are
    returned unchanged (as copies), and the rescaling loop guards against
    one-ulp overshoot from float rounding.
    """
    if np.isnan(c) or c < 0:
        raise ConfigurationError(f"clipping constant must be >= 0, got {c}")
    n = _group_norm(arrays)
    if n <= c:
        return [a.copy() for a in arrays]
    if c == 0.0:
        return [np.zeros_like(a) for a in arrays]
    out = arrays
    for _ in range(64):
        if n <= c:
            break
        f = c / n
        nxt = [a * f for a in out]
        n2 = _group_norm(nxt)
        if n2 >= n:  # rounding stalled; force one ulp of progress
            f = np.nextafter(f, 0.0)
            nxt = [a * f for a in out]
            n2 = _group_norm(nxt)
        out, n = nxt, n2
    return [a.copy() for a in out] if out is arrays else out


def clip_full(v, c):
    """[v]_C: v scaled by min(1, C/||v||); the zero vector stays zero."""
    if not c > 0:
        raise ConfigurationError(f"clipping constant must be > 0, got {c}")
    return LayeredVector(_clip_arrays(v.layers, float(c)))


def groups_partition(num_layers, layer_groups=None):
    """Partition layer indices 0..L-1 into clip groups.

    ``layer_groups`` assigns one group label per layer; groups are ordered
    by first appearance.  Default: each layer is its own group.
    """
    if layer_groups is None:
        return [[h] for h in range(num_layers)]
    if len(layer_groups) != num_layers:
        raise ConfigurationError(
            f"layer_groups has {len(layer_groups)} entries for {num_layers} layers"
        )
    order = {}
    for h, label in enumerate(layer_groups):
        order.setdefault(label, []).append(h)
    return list(order.values())


def clip_layerwise(v, constants, layer_groups=None):
    """Clip each layer part (or each layer group, jointly) at its own bound."""
    partition = groups_partition(v.num_layers, layer_groups)
    constants = np.asarray(constants, dtype=np.float64)
    if constants.shape != (len(partition),):
        raise ConfigurationError(
            f"{len(partition)} clip groups but {constants.size} constants given"
        )
    if np.any(constants < 0) or np.any(np.isnan(constants)):
        raise ConfigurationError("layerwise clipping constants must all be >= 0")
    out = [None] * v.num_layers
    for c, members in zip(constants, partition):
        clipped = _clip_arrays([v.layers[h] for h in members], float(c))
        for h, arr in zip(members, clipped):
            out[h] = arr
    return LayeredVector(out)


def layer_norm_estimates(model, weights, public_data, layer_groups=None):
    """Mean gradient norm e_g of each clip group over the public samples.

    Per-sample layer-gradient norms are averaged one sample at a time.  For
    batchnorm models (no per-sample gradients) the estimate falls back to
    gradients of micro-batches of size min(8, |public|).
    """
    if not isinstance(public_data, network.Batch):
        raise ConfigurationError("public data must be a Batch")
    if public_data.size < 1:
        raise ConfigurationError("public dataset must be nonempty")
    partition = groups_partition(model.num_param_layers, layer_groups)
    if model.has_batchnorm:
        size = min(NORM_PROXY_BATCH, public_data.size)
        rows = []
        for start in range(0, public_data.size, size):
            chunk = network.Batch(
                public_data.inputs[start:start + size],
                public_data.labels[start:start + size],
            )
            g = network.grad_batch(model, weights, chunk)
            rows.append([np.linalg.norm(a) for a in g.layers])
        norms = np.asarray(rows)
    else:
        norms = network.per_sample_layer_norms(model, weights, public_data)
    grouped = np.column_stack(
        [np.sqrt((norms[:, members] ** 2).sum(axis=1)) for members in partition]
    )
    return grouped.mean(axis=0)


def alc_constants(model, weights, public_data, master_c, layer_groups=None):
    """Layerwise constants C_h = C * e_h / M with M = max_h e_h.

    Each constant scales linearly with the master constant and the largest
    one equals it.  If every estimate is zero the constants all fall back to
    the master constant.
    """
    if not master_c > 0:
        raise ConfigurationError(f"master clipping constant must be > 0, got {master_c}")
    e = layer_norm_estimates(model, weights, public_data, layer_groups)
    M = e.max()
    if M == 0.0:
        return np.full(e.shape, float(master_c))
    return master_c * e / M


def zhang_constants(model, weights, public_data, layer_groups=None):
    """Layerwise constants set directly to the norm estimates e_h."""
    return layer_norm_estimates(model, weights, public_data, layer_groups)


def aggregate_clipped(per_unit_grads, spec, constants):
    """U = sum_h [a_h]_C over the micro-batch gradients of one round.

    ``constants`` is the scalar bound under full scope or the per-group
    bounds under layerwise scope.
    """
    grads = list(per_unit_grads)
    if not grads:
        raise ConfigurationError("aggregate_clipped needs at least one gradient")
    total = zeros_like(grads[0])
    for a in grads:
        if spec.scope == "full":
            total = total + clip_full(a, float(constants))
        else:
            total = total + clip_layerwise(a, constants, spec.layer_groups)
    return total


def fgc_with_multipliers(g, spec):
    """Scale each layer by its factor, then clip the full rescaled vector."""
    if g.num_layers != len(spec.factors):
        raise ConfigurationError(
            f"{g.num_layers} layers but {len(spec.factors)} multiplication factors"
        )
    scaled = LayeredVector([a * f for a, f in zip(g.layers, spec.factors)])
    return clip_full(scaled, spec.c)


def unscale(u, spec):
    """Divide each layer by its factor, recovering the original layer
    gradients whenever the clip in :func:`fgc_with_multipliers` was inactive."""
    if u.num_layers != len(spec.factors):
        raise ConfigurationError(
            f"{u.num_layers} layers but {len(spec.factors)} multiplication factors"
        )
    return LayeredVector([a / f for a, f in zip(u.layers, spec.factors)])
