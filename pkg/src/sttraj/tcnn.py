"""Time-extrapolator convolution decoder and the Gaussian parameter map."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

T_IN = 8
T_OUT = 12
N_GAUSS = 5  # mu_x, mu_y, log sigma_x, log sigma_y, atanh-ish rho
LOG_SIGMA_CLAMP = 30.0
RHO_LIMIT = 1.0 - 1e-6


@dataclass
class TcnnParams:
    w0: Tensor  # (12, 8, k)
    b0: Tensor  # (12,)
    refine: list = field(default_factory=list)  # [(weight (12,12,k), bias (12,), slope)]

    @property
    def kernel_width(self):
        return self.w0.shape[2]

    @classmethod
    def init(cls, rng, kernel_width=3, refine_layers=1, t_in=T_IN, t_out=T_OUT):
        if kernel_width % 2 == 0:
            raise ConfigError(f"kernel width must be odd, got {kernel_width}")

        def conv(cout, cin):
            bound = math.sqrt(1.0 / (cin * kernel_width))
            return (Tensor(rng.uniform(-bound, bound, size=(cout, cin, kernel_width)), requires_grad=True),
                    Tensor(np.zeros(cout), requires_grad=True))

        w0, b0 = conv(t_out, t_in)
        refine = []
        for _ in range(refine_layers):
            w, b = conv(t_out, t_out)
            refine.append((w, b, Tensor(0.25, requires_grad=True)))
        return cls(w0, b0, refine)


@dataclass
class GaussianField:
    mu: Tensor  # (12, N, 2)
    sigma: Tensor  # (12, N, 2), > 0
    rho: Tensor  # (12, N), |rho| < 1

    @property
    def num_steps(self):
        return self.mu.shape[0]

    @property
    def num_peds(self):
        return self.mu.shape[1]

    def numpy(self):
        return self.mu.data, self.sigma.data, self.rho.data


def tcnn_forward(X, params):
    """Map (5, 8, N) graph features to a raw (5, 12, N) parameter block.

    Time steps act as channels; the convolution slides along the feature axis.
    """
    X = ad.as_tensor(X)
    t_in = params.w0.shape[1]
    if X.ndim != 3 or X.shape[1] != t_in:
        raise ShapeError(f"decoder expects (D, {t_in}, N) input, got {X.shape}")
    h = ad.conv_over_time(ad.transpose(X, (1, 0, 2)), params.w0, params.b0)
    for w, b, slope in params.refine:
        h = h + ad.conv_over_time(ad.prelu(h, slope), w, b)
    return ad.transpose(h, (1, 0, 2))


def to_gaussian_field(raw):
    """Split a raw (5, T, N) block into mu, sigma = exp(.), rho = tanh(.).

    Log-sigma is clamped to +-30 and rho scaled by 1 - 1e-6 so extreme raw
    values still give sigma > 0 and |rho| < 1 in float64.
    """
    raw = ad.as_tensor(raw)
    if raw.ndim != 3 or raw.shape[0] != N_GAUSS:
        raise ShapeError(f"raw field must be (5, T, N), got {raw.shape}")
    mu = ad.transpose(raw[0:2], (1, 2, 0))
    sigma = ad.exp(ad.clip(ad.transpose(raw[2:4], (1, 2, 0)), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
    rho = ad.tanh(raw[4]) * RHO_LIMIT
    return GaussianField(mu, sigma, rho)
