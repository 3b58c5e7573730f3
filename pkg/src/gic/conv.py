"""Graph convolution by mixture-gradient encoding of receptive fields.

Each vertex's k-hop field is treated as a weighted sample set; its feature
is the gradient of a Gaussian-mixture log-likelihood with respect to the
component means and deviations, concatenated over scales, then passed
through a linear filter bank and ReLU.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .graphs import AttributeGraph, ReceptiveField, field_matrix

LOG_2PI = float(np.log(2.0 * np.pi))


class EiGmmConvLayer:
    """Per-scale Gaussian parameters plus the shared filter bank.

    Scales carry independent parameter sets: ``alpha[k]`` (C1,), ``mu[k]``
    (C1, d), ``log_sigma[k]`` (C1, d). The filter maps the concatenated
    K*C1*2d feature to ``out_dim``.
    """

    def __init__(self, in_dim: int, out_dim: int, num_scales: int,
                 num_components: int, seed: int = 0):
        if min(in_dim, out_dim, num_scales, num_components) < 1:
            raise ad.ShapeError("layer dimensions must all be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.num_scales = num_scales
        self.num_components = num_components
        rng = np.random.default_rng(seed)
        std = 1.0 / np.sqrt(in_dim)
        self.alpha = [ad.Value(np.zeros(num_components), requires_grad=True)
                      for _ in range(num_scales)]
        self.mu = [ad.Value(rng.normal(scale=std, size=(num_components, in_dim)),
                            requires_grad=True) for _ in range(num_scales)]
        self.log_sigma = [ad.Value(np.zeros((num_components, in_dim)), requires_grad=True)
                          for _ in range(num_scales)]
        fan_in = self.concat_feature_len
        self.filter = ad.Value(
            rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_in, out_dim)),
            requires_grad=True,
        )
        self.bias = ad.Value(np.zeros(out_dim), requires_grad=True)

    @property
    def per_scale_feature_len(self) -> int:
        return 2 * self.in_dim * self.num_components

    @property
    def concat_feature_len(self) -> int:
        return self.num_scales * self.per_scale_feature_len

    @property
    def filter_param_count(self) -> int:
        return self.concat_feature_len * self.out_dim

    def parameters(self) -> dict[str, ad.Value]:
        params: dict[str, ad.Value] = {}
        for k in range(self.num_scales):
            params[f"scale{k}.alpha"] = self.alpha[k]
            params[f"scale{k}.mu"] = self.mu[k]
            params[f"scale{k}.log_sigma"] = self.log_sigma[k]
        params["filter.weight"] = self.filter
        params["filter.bias"] = self.bias
        return params


def weighted_log_gaussian(x, mu, sigma, a: float) -> float:
    """Log density of x under N(mu, diag(sigma^2)/a), diagonal covariance.

    The weight ``a`` acts as an observation count: larger a sharpens the
    density around the mean.
    """
    if a <= 0:
        raise ValueError(f"observation weight must be positive, got {a}")
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    z = (x - mu) / sigma
    return float(
        np.sum(0.5 * np.log(a) - 0.5 * LOG_2PI - np.log(sigma) - 0.5 * a * z * z)
    )


def responsibilities(rf: ReceptiveField, layer: EiGmmConvLayer, scale: int) -> np.ndarray:
    """Posterior component memberships per field member, rows summing to 1."""
    alpha = layer.alpha[scale].data
    mu = layer.mu[scale].data
    sigma = np.exp(layer.log_sigma[scale].data)
    logpi = alpha - (alpha.max() + np.log(np.exp(alpha - alpha.max()).sum()))
    n, C = len(rf.members), layer.num_components
    logits = np.empty((n, C))
    for j in range(n):
        for c in range(C):
            logits[j, c] = logpi[c] + weighted_log_gaussian(
                rf.member_attributes[j], mu[c], sigma[c], rf.weights[j]
            )
    shift = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - shift)
    return e / e.sum(axis=1, keepdims=True)


def encode_fields(field_W: np.ndarray, X: ad.Value, layer: EiGmmConvLayer,
                  scale: int) -> ad.Value:
    """Differentiable encode of every row of ``field_W`` (one vertex each).

    Differentiates w.r.t. member attributes and the scale's (alpha, mu,
    log sigma); the field weights are structural constants.
    """
    alpha, mu, ls = layer.alpha[scale], layer.mu[scale], layer.log_sigma[scale]
    F, cache = kernels.encode_forward(field_W, X.data, alpha.data, mu.data, ls.data)

    def vjp(g):
        gX, galpha, gmu, gls = kernels.encode_backward(cache, g)
        return gX, galpha, gmu, gls

    return ad.custom((X, alpha, mu, ls), F, vjp)


def encode_subgraph(rf: ReceptiveField, layer: EiGmmConvLayer, scale: int) -> np.ndarray:
    """Feature vector (length 2*d*C1) for a single receptive field."""
    W = rf.weights[None, :]
    F, _ = kernels.encode_forward(
        W, rf.member_attributes, layer.alpha[scale].data,
        layer.mu[scale].data, layer.log_sigma[scale].data,
    )
    return F[0]


def conv_apply(field_mats: list[np.ndarray], X: ad.Value,
               layer: EiGmmConvLayer) -> ad.Value:
    """Encode at every scale, concatenate, filter, ReLU. Returns (m, out_dim)."""
    if X.data.shape[1] != layer.in_dim:
        raise ad.ShapeError(
            f"layer expects {layer.in_dim} input dims, got {X.data.shape[1]}"
        )
    if len(field_mats) != layer.num_scales:
        raise ad.ShapeError(
            f"need {layer.num_scales} field matrices, got {len(field_mats)}"
        )
    feats = [encode_fields(field_mats[k], X, layer, k)
             for k in range(layer.num_scales)]
    F = ad.concat(feats, axis=1) if len(feats) > 1 else feats[0]
    return ad.relu(ad.add(ad.matmul(F, layer.filter), layer.bias))


def conv_forward(g: AttributeGraph, layer: EiGmmConvLayer,
                 variant: str = "walk") -> np.ndarray:
    """Convenience single-graph forward: new attribute matrix (m, out_dim)."""
    mats = [field_matrix(g.adjacency, k, variant)
            for k in range(1, layer.num_scales + 1)]
    return conv_apply(mats, ad.Value(g.attributes), layer).data
