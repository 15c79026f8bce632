"""Bivariate-Gaussian likelihood, MMD loss, sampling and displacement metrics."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DomainError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_BANDWIDTHS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class LossConfig:
    alpha: float = 0.3
    mmd_bandwidths: tuple = DEFAULT_BANDWIDTHS
    mmd_sample_count: int = 4

    def __post_init__(self):
        self.mmd_bandwidths = tuple(float(b) for b in self.mmd_bandwidths)
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.mmd_bandwidths or min(self.mmd_bandwidths) <= 0:
            raise ConfigError("MMD bandwidths must be positive")
        if self.mmd_sample_count < 1:
            raise ConfigError("mmd_sample_count must be >= 1")


def make_rng(seed):
    """A counter-based generator; ints and sequences of ints are both accepted."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _check_domain(sigma, rho):
    if np.any(~(np.asarray(sigma) > 0)):
        raise DomainError("sigma must be strictly positive")
    if np.any(~(np.abs(np.asarray(rho)) < 1)):
        raise DomainError("|rho| must be strictly below 1")


def bigauss_density(point, mu, sigma, rho):
    """Bivariate normal density; arguments broadcast over leading axes."""
    point, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (point, mu, sigma))
    rho = np.asarray(rho, dtype=np.float64)
    _check_domain(sigma, rho)
    dx = (point[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (point[..., 1] - mu[..., 1]) / sigma[..., 1]
    one_m = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    norm = 2.0 * math.pi * sigma[..., 0] * sigma[..., 1] * np.sqrt(one_m)
    out = np.exp(-z / (2.0 * one_m)) / norm
    return float(out) if out.ndim == 0 else out


def bigauss_log_density(point, mu, sigma, rho):
    """Differentiable log-density; ``point``/``mu``/``sigma`` are (..., 2), ``rho`` (...)."""
    point = ad.as_tensor(point)
    mu, sigma, rho = ad.as_tensor(mu), ad.as_tensor(sigma), ad.as_tensor(rho)
    _check_domain(sigma.data, rho.data)
    sx, sy = sigma[..., 0], sigma[..., 1]
    dx = (point[..., 0] - mu[..., 0]) / sx
    dy = (point[..., 1] - mu[..., 1]) / sy
    one_m = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    return -LOG_2PI - ad.log(sx) - ad.log(sy) - 0.5 * ad.log(one_m) - z / (2.0 * one_m)


def nll_loss(field, gt_future):
    """Negative log-likelihood summed over steps, averaged over pedestrians.

    ``gt_future`` is (T, N, 2) in the same coordinate mode as the field.
    """
    gt = np.asarray(gt_future.data if isinstance(gt_future, Tensor) else gt_future, dtype=np.float64)
    if gt.shape != field.mu.shape:
        raise ShapeError(f"ground truth {gt.shape} does not match field {field.mu.shape}")
    logp = bigauss_log_density(Tensor(gt), field.mu, field.sigma, field.rho)
    return -ad.tsum(logp) * (1.0 / field.num_peds)


def mmd_loss(sample_x, sample_y, bandwidths=DEFAULT_BANDWIDTHS):
    """Biased squared MMD with a sum of RBF kernels; differentiable in both sets."""
    return ad.rbf_mmd(sample_x, sample_y, bandwidths)


def reparam_samples(field, count, rng):
    """Draw ``count`` points per node-step, differentiable in mu, sigma and rho.

    Returns a (count * T * N, 2) tensor.
    """
    shape = (count,) + field.rho.shape
    e = rng.standard_normal(shape + (2,))
    e1, e2 = Tensor(e[..., 0]), Tensor(e[..., 1])
    sx, sy = field.sigma[..., 0], field.sigma[..., 1]
    x = field.mu[..., 0] + sx * e1
    y = field.mu[..., 1] + sy * (field.rho * e1 + ad.sqrt(1.0 - field.rho * field.rho) * e2)
    pts = ad.stack([x, y], axis=-1)
    return ad.reshape(pts, (-1, 2))


@dataclass
class LossTerms:
    total: Tensor
    nll: Tensor
    mmd: Tensor


def loss_terms(field, gt_future, config, rng):
    """NLL, MMD and their weighted sum ``nll + alpha * mmd``."""
    gt = np.asarray(gt_future.data if isinstance(gt_future, Tensor) else gt_future, dtype=np.float64)
    nll = nll_loss(field, gt)
    drawn = reparam_samples(field, config.mmd_sample_count, rng)
    mmd = mmd_loss(Tensor(gt.reshape(-1, 2)), drawn, config.mmd_bandwidths)
    total = nll + config.alpha * mmd
    return LossTerms(total, nll, mmd)


def total_loss(field, gt_future, config, rng):
    return loss_terms(field, gt_future, config, rng).total


# ---------------------------------------------------------------------------
# sampling and metrics (plain numpy)


def sample_trajectories(field, K, seed, last_obs_pos, coord_mode="relative"):
    """Draw K trajectories (K, T, N, 2) in absolute coordinates.

    Standard normals are drawn in one (K, T, N, 2) block, so with the same
    seed the first K samples of a larger draw equal a K-sample draw.
    """
    if K < 1:
        raise ContractError("K must be >= 1")
    mu, sigma, rho = (np.asarray(a.data if isinstance(a, Tensor) else a) for a in (field.mu, field.sigma, field.rho))
    rng = make_rng(seed)
    e = rng.standard_normal((K,) + rho.shape + (2,))
    sx, sy = sigma[..., 0], sigma[..., 1]
    dx = mu[..., 0] + sx * e[..., 0]
    dy = mu[..., 1] + sy * (rho * e[..., 0] + np.sqrt(1.0 - rho * rho) * e[..., 1])
    steps = np.stack([dx, dy], axis=-1)
    if coord_mode == "absolute":
        return steps
    return np.asarray(last_obs_pos)[None, None, :, :] + np.cumsum(steps, axis=1)


def mean_path(field, last_obs_pos, coord_mode="relative"):
    mu = field.mu.data if isinstance(field.mu, Tensor) else np.asarray(field.mu)
    if coord_mode == "absolute":
        return mu.copy()
    return np.asarray(last_obs_pos)[None, :, :] + np.cumsum(mu, axis=0)


def point_errors(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return np.sqrt(np.sum((pred - gt) ** 2, axis=-1))


def ade(pred, gt):
    """Mean L2 error over every (step, pedestrian) point of (T, N, 2) paths."""
    return float(np.mean(point_errors(pred, gt)))


def fde(pred, gt):
    """Mean L2 error at the final step."""
    return float(np.mean(point_errors(pred, gt)[-1]))


def var_ade(pred, gt):
    """Root-mean-square deviation of per-point errors around the ADE."""
    return dispersion(point_errors(pred, gt))


def dispersion(errors):
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    # shifting by one sample first keeps equal errors at exactly 0
    d = errors - errors[0]
    return float(np.sqrt(np.mean((d - d.mean()) ** 2)))


def best_of_k_errors(field, gt_abs, K, seed, last_obs_pos, coord_mode="relative"):
    """Per-point errors (T, N) of the sample with the lowest ADE."""
    samples = sample_trajectories(field, K, seed, last_obs_pos, coord_mode)
    errs = point_errors(samples, np.broadcast_to(np.asarray(gt_abs, dtype=np.float64), samples.shape))
    best = int(np.argmin(errs.reshape(K, -1).mean(axis=1)))
    return errs[best]


def best_of_k_metrics(field, gt_abs, K, seed, last_obs_pos, coord_mode="relative"):
    """(ade, fde, var_ade) of the best of K sampled trajectories."""
    errs = best_of_k_errors(field, gt_abs, K, seed, last_obs_pos, coord_mode)
    return float(errs.mean()), float(errs[-1].mean()), dispersion(errs)


@dataclass
class MetricsReport:
    per_scene: dict = field(default_factory=dict)  # scene -> (ade, fde, var_ade)

    @classmethod
    def from_errors(cls, errors_by_scene):
        """Pool per-point error arrays (T, N) of every window of each scene."""
        per_scene = {}
        for scene, arrays in errors_by_scene.items():
            flat = np.concatenate([a.reshape(-1) for a in arrays])
            final = np.concatenate([a[-1].reshape(-1) for a in arrays])
            per_scene[scene] = (float(flat.mean()), float(final.mean()), dispersion(flat))
        return cls(per_scene)

    def _column(self, i):
        return np.array([v[i] for v in self.per_scene.values()])

    @property
    def avg_ade(self):
        return float(np.mean(self._column(0)))

    @property
    def avg_fde(self):
        return float(np.mean(self._column(1)))

    @property
    def avg_var_ade(self):
        return float(np.mean(self._column(2)))

    @property
    def cross_scene_var(self):
        """Population variance of per-scene (ADE, FDE)."""
        return float(np.var(self._column(0))), float(np.var(self._column(1)))

    def rows(self):
        out = [(name, *vals) for name, vals in self.per_scene.items()]
        out.append(("AVG", self.avg_ade, self.avg_fde, self.avg_var_ade))
        var_ade_col = float(np.var(self._column(2)))
        out.append(("Var", *self.cross_scene_var, var_ade_col))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene", "ade", "fde", "var_ade"])
            for name, a, f, v in self.rows():
                w.writerow([name, repr(a), repr(f), repr(v)])

    def format_table(self):
        lines = [f"{'scene':<12}{'ade':>10}{'fde':>10}{'var_ade':>10}"]
        for name, a, f, v in self.rows():
            lines.append(f"{name:<12}{a:>10.4f}{f:>10.4f}{v:>10.4f}")
        return "\n".join(lines)


def write_sample_csv(path, samples, ped_ids, obs=None, gt=None):
    """Sample-cloud CSV ``sample_id,t,ped_id,x,y``.

    ``samples`` is (K, T_pred, N, 2); observed rows use sample_id ``obs`` and
    ground-truth rows ``gt``. Observed steps are numbered 0..T_obs-1, future
    steps continue from T_obs.
    """
    t_obs = 0 if obs is None else obs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "t", "ped_id", "x", "y"])
        if obs is not None:
            for n, pid in enumerate(ped_ids):
                for t in range(obs.shape[1]):
                    w.writerow(["obs", t, pid, repr(float(obs[n, t, 0])), repr(float(obs[n, t, 1]))])
        if gt is not None:
            for n, pid in enumerate(ped_ids):
                for t in range(gt.shape[1]):
                    w.writerow(["gt", t_obs + t, pid, repr(float(gt[n, t, 0])), repr(float(gt[n, t, 1]))])
        for k in range(samples.shape[0]):
            for t in range(samples.shape[1]):
                for n, pid in enumerate(ped_ids):
                    w.writerow([k, t_obs + t, pid, repr(float(samples[k, t, n, 0])), repr(float(samples[k, t, n, 1]))])
