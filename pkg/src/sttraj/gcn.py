"""Normalized graph convolutions over the spatial and temporal graphs."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import build_spatial_adjacency, build_temporal_adjacency
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

VARIANTS = ("S", "T", "ST")


@dataclass
class GcnLayerParams:
    weight: Tensor  # (d_in, d_out)
    slope: Tensor  # scalar PReLU slope


def normalize_adjacency(A):
    """Lambda^-1/2 (A + I) Lambda^-1/2 for a stack (..., n, n) of adjacencies."""
    A = ad.as_tensor(A)
    n = A.shape[-1]
    if A.ndim < 2 or A.shape[-2] != n:
        raise ShapeError(f"adjacency must be square, got {A.shape}")
    a_hat = A + np.eye(n)
    deg = ad.tsum(a_hat, axis=-1)
    # (d_i d_j)^-1/2 in one rounding, so e.g. degrees 2 and 2 give exactly 0.5
    pair = ad.reshape(deg, deg.shape + (1,)) * ad.reshape(deg, deg.shape[:-1] + (1, n))
    return a_hat * ad.power(pair, -0.5)


def graph_conv(X, A, layer):
    """PReLU(norm(A) X W) for batched node features X (B, n, d_in) and A (B, n, n)."""
    X = ad.as_tensor(X)
    A = ad.as_tensor(A)
    if A.shape[:-1] != X.shape[:-1]:
        raise ShapeError(f"adjacency {A.shape} does not match features {X.shape}")
    if X.shape[-1] != layer.weight.shape[0]:
        raise ShapeError(f"feature width {X.shape[-1]} does not match weight {layer.weight.shape}")
    return ad.prelu(ad.matmul(ad.matmul(normalize_adjacency(A), X), layer.weight), layer.slope)


def spatial_graph_conv(X_t, adjacency, layer):
    """X_t: (T, N, d_in) features per time step; one N x N adjacency per step."""
    mats = adjacency.mats if hasattr(adjacency, "mats") else adjacency
    return graph_conv(X_t, mats, layer)


def temporal_graph_conv(X_n, adjacency, layer):
    """X_n: (N, T, d_in) features per pedestrian; one T x T adjacency per pedestrian."""
    mats = adjacency.mats if hasattr(adjacency, "mats") else adjacency
    return graph_conv(X_n, mats, layer)


def st_block_forward(X, spatial_attn, temporal_attn, spatial_gcn, temporal_gcn, mid_weight, mid_bias, variant="ST"):
    """Spatial GCN -> 1-wide conv -> temporal GCN on a (D, T, N) feature block.

    ``variant`` "S" drops the temporal graph layer, "T" drops the spatial one.
    Returns ``(out, info)`` with ``out`` shaped (d_model, T, N) and ``info``
    holding the adjacency stacks that were built.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    info = {}
    x = X
    if variant in ("S", "ST"):
        per_t = ad.transpose(x, (1, 2, 0))  # (T, N, D)
        adj = build_spatial_adjacency(per_t, spatial_attn)
        info["spatial"] = adj
        x = ad.transpose(spatial_graph_conv(per_t, adj, spatial_gcn), (2, 0, 1))
    x = ad.conv_over_time(x, mid_weight, mid_bias)
    if variant in ("T", "ST"):
        per_n = ad.transpose(x, (2, 1, 0))  # (N, T, d)
        adj = build_temporal_adjacency(per_n, temporal_attn)
        info["temporal"] = adj
        x = ad.transpose(temporal_graph_conv(per_n, adj, temporal_gcn), (2, 1, 0))
    return x, info


def spectral_radius(M, iters=500, seed=0):
    """Power-iteration estimate of the spectral radius of a symmetric matrix."""
    M = np.asarray(M, dtype=np.float64)
    v = np.random.default_rng(seed).normal(size=M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam = abs(float(v @ w))
        v = w / norm
    return lam
