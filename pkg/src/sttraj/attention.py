"""Attention-derived adjacency matrices for the spatial and temporal graphs.

The adjacency is the head-averaged attention weight matrix
softmax(Q K^T / sqrt(d_k)), symmetrized as (M + M^T) / 2. The value and
output projections are kept on :class:`AttentionParams` for the full
multi-head output (:func:`multihead_output`) but do not feed the adjacency.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class AttentionParams:
    w_in: Tensor  # (d_in, d_model) feature lift
    w_q: Tensor  # (h, d_model, d_k)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor  # (h * d_k, d_model)

    @property
    def heads(self):
        return self.w_q.shape[0]

    @property
    def d_model(self):
        return self.w_q.shape[1]

    @property
    def d_k(self):
        return self.w_q.shape[2]

    @property
    def d_in(self):
        return self.w_in.shape[0]

    def named(self):
        return {"w_in": self.w_in, "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}

    @classmethod
    def init(cls, d_in, d_model, heads, rng):
        if heads < 1 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        d_k = d_model // heads

        def uniform(shape, fan_in, grad=True):
            bound = math.sqrt(1.0 / fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=grad)

        return cls(
            w_in=uniform((d_in, d_model), d_in),
            w_q=uniform((heads, d_model, d_k), d_model),
            w_k=uniform((heads, d_model, d_k), d_model),
            # inactive in the adjacency path, so not trained
            w_v=uniform((heads, d_model, d_k), d_model, grad=False),
            w_o=uniform((heads * d_k, d_model), d_model, grad=False),
        )


@dataclass
class AdjacencyStack:
    axis: str  # "spatial" or "temporal"
    mats: Tensor  # (B, n, n) symmetric
    raw: Tensor  # head-averaged weights before symmetrization

    def __len__(self):
        return self.mats.shape[0]


def _check_width(H, width):
    if H.shape[-1] != width:
        raise ShapeError(f"feature width {H.shape[-1]} does not match d_model={width}")


def attention_weights(H, params):
    """Per-head attention weights for node features H (..., n, d_model).

    Returns (..., h, n, n); every row sums to 1.
    """
    H = ad.as_tensor(H)
    _check_width(H, params.d_model)
    Hh = ad.reshape(H, H.shape[:-2] + (1,) + H.shape[-2:])
    q = ad.matmul(Hh, params.w_q)
    k = ad.matmul(Hh, params.w_k)
    scores = ad.matmul(q, ad.swap_last(k)) * (1.0 / math.sqrt(params.d_k))
    return ad.softmax_lastdim(scores)


def multihead_output(H, params):
    """Concat(head_1..head_h) W_O for node features H (n, d_model)."""
    H = ad.as_tensor(H)
    weights = attention_weights(H, params)
    v = ad.matmul(ad.reshape(H, (1,) + H.shape), params.w_v)
    heads = ad.matmul(weights, v)  # (h, n, d_k)
    concat = ad.reshape(ad.transpose(heads, (1, 0, 2)), (H.shape[0], -1))
    return ad.matmul(concat, params.w_o)


def _adjacency(features, params, axis):
    features = ad.as_tensor(features)
    if features.ndim != 3:
        raise ShapeError(f"expected (groups, nodes, width) features, got {features.shape}")
    if features.shape[-1] != params.d_in:
        raise ShapeError(f"feature width {features.shape[-1]} does not match lift input {params.d_in}")
    H = ad.matmul(features, params.w_in)
    w = attention_weights(H, params)  # (B, h, n, n)
    m = ad.mean(w, axis=1)
    sym = (m + ad.swap_last(m)) * 0.5
    return AdjacencyStack(axis, sym, m)


def build_spatial_adjacency(features, params):
    """Spatial adjacencies from per-time features (T, N, d_in) -> T matrices N x N."""
    return _adjacency(features, params, "spatial")


def build_temporal_adjacency(features, params):
    """Temporal adjacencies from per-pedestrian features (N, T, d_in) -> N matrices T x T."""
    return _adjacency(features, params, "temporal")


def is_symmetric(mats, atol=0.0):
    m = mats.data if isinstance(mats, Tensor) else np.asarray(mats)
    return bool(np.all(np.abs(m - np.swapaxes(m, -1, -2)) <= atol))
