"""Quadratic networks of logarithmic depth that exactly represent factored
univariate polynomials  P(x) = C * prod(x - x_i) * prod(x^2 + a_j x + b_j).

Layer 1 evaluates every factor with one quadratic neuron each; later layers
are a binary product tree of two-input product neurons, with odd leftovers
carried by one-input identity neurons.  All activations are the identity, so
the representation is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neuron import IDENTITY, QuadraticParams, quad_forward


@dataclass(frozen=True)
class FactoredPoly:
    scale: float                     # leading coefficient C
    linear: tuple = ()               # roots x_i
    quadratic: tuple = ()            # (a_j, b_j) pairs

    @property
    def degree(self) -> int:
        return len(self.linear) + 2 * len(self.quadratic)

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full_like(x, self.scale, dtype=np.float64)
        for root in self.linear:
            out = out * (x - root)
        for a, b in self.quadratic:
            out = out * (x * x + a * x + b)
        return out

    def coefficients(self):
        """Expanded coefficients, highest degree first (for a Horner oracle)."""
        coeffs = np.array([self.scale])
        for root in self.linear:
            coeffs = np.convolve(coeffs, [1.0, -root])
        for a, b in self.quadratic:
            coeffs = np.convolve(coeffs, [1.0, a, b])
        return coeffs


def _neuron(width, w_r, b_r, w_g, b_g, c=0.0):
    vec = lambda entries: np.array([entries.get(i, 0.0) for i in range(width)])
    return QuadraticParams(vec(w_r), vec(w_g), np.zeros(width), b_r, b_g, c)


@dataclass
class PolyNet:
    layers: list                     # each layer: list of QuadraticParams

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return max(len(layer) for layer in self.layers)


def build_polynet(p: FactoredPoly) -> PolyNet:
    n_factors = len(p.linear) + len(p.quadratic)
    if n_factors == 0:
        raise ValueError("at least one factor is required")
    first = []
    for i, root in enumerate(p.linear):
        scale = p.scale if i == 0 else 1.0
        # scale*(x - root) = (scale*x - scale*root) * (0*x + 1)
        first.append(_neuron(1, {0: scale}, -scale * root, {}, 1.0))
    for j, (a, b) in enumerate(p.quadratic):
        scale = p.scale if not p.linear and j == 0 else 1.0
        # scale*(x^2 + a x + b) = (scale*x)(x + a) + scale*b
        first.append(_neuron(1, {0: scale}, 0.0, {0: 1.0}, a, scale * b))
    layers = [first]
    width = n_factors
    while width > 1:
        layer = []
        for i in range(0, width - 1, 2):
            # product of inputs i and i+1
            layer.append(_neuron(width, {i: 1.0}, 0.0, {i + 1: 1.0}, 0.0))
        if width % 2:
            # odd leftover passes through unchanged
            layer.append(_neuron(width, {width - 1: 1.0}, 0.0, {}, 1.0))
        layers.append(layer)
        width = len(layer)
    return PolyNet(layers=layers)


def eval_polynet(net: PolyNet, x: float) -> float:
    values = np.array([float(x)])
    for layer in net.layers:
        values = np.array([quad_forward(values, neuron, IDENTITY)
                           for neuron in layer])
    return float(values[0])


def expected_depth(n_factors: int) -> int:
    """ceil(log2(n_factors)) + 1, computed exactly."""
    return (n_factors - 1).bit_length() + 1
