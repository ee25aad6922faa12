"""Layered parameter vectors.

A model's weights and gradients are concatenations of per-layer parts
``(w_1 | ... | w_L)``.  ``LayeredVector`` keeps the parts separate so that
clipping and noise can act on individual layers; arithmetic is elementwise
across matching layouts.
"""

import numpy as np


class LayeredVector:
    """An ordered collection of flat float64 arrays, one per parameter group."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = tuple(np.asarray(a, dtype=np.float64).ravel() for a in layers)

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def total_dim(self):
        return sum(a.size for a in self.layers)

    def layer_dims(self):
        return tuple(a.size for a in self.layers)

    def copy(self):
        return LayeredVector([a.copy() for a in self.layers])

    def norm(self):
        """Euclidean norm of the full concatenated vector."""
        return float(np.sqrt(sum(float(a @ a) for a in self.layers)))

    def flatten(self):
        return np.concatenate(self.layers) if self.layers else np.zeros(0)

    def _check_layout(self, other):
        if self.layer_dims() != other.layer_dims():
            raise ValueError(
                f"layer layout mismatch: {self.layer_dims()} vs {other.layer_dims()}"
            )

    def __add__(self, other):
        self._check_layout(other)
        return LayeredVector([a + b for a, b in zip(self.layers, other.layers)])

    def __sub__(self, other):
        self._check_layout(other)
        return LayeredVector([a - b for a, b in zip(self.layers, other.layers)])

    def __mul__(self, scalar):
        return LayeredVector([a * float(scalar) for a in self.layers])

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, LayeredVector):
            return NotImplemented
        return self.layer_dims() == other.layer_dims() and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self):
        return f"LayeredVector(layers={self.num_layers}, total_dim={self.total_dim})"


def zeros_like(v):
    return LayeredVector([np.zeros_like(a) for a in v.layers])


def from_flat(flat, layer_dims):
    """Rebuild a LayeredVector from a flat array and per-layer sizes."""
    flat = np.asarray(flat, dtype=np.float64).ravel()
    if flat.size != sum(layer_dims):
        raise ValueError(f"flat size {flat.size} != expected {sum(layer_dims)}")
    offsets = np.cumsum((0,) + tuple(layer_dims))
    return LayeredVector([flat[offsets[i]:offsets[i + 1]] for i in range(len(layer_dims))])


def layer_norms(v):
    """Euclidean norm of each layer part, in model order."""
    return [float(np.linalg.norm(a)) for a in v.layers]
