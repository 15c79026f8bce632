"""The full predictor, SGD with momentum, and the binary checkpoint format."""
import dataclasses
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams
from .autodiff import Tensor
from .errors import ConfigError, IncompatibleCheckpointError, IntegrityError
from .gcn import VARIANTS, GcnLayerParams, st_block_forward
from .losses import LossConfig, make_rng
from .tcnn import N_GAUSS, T_IN, TcnnParams, tcnn_forward, to_gaussian_field

D_IN = 2
MAGIC = b"STTC"
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 16
    heads: int = 4
    tcnn_refine_layers: int = 1
    kernel_width: int = 3
    variant: str = "ST"
    coord_mode: str = "relative"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by heads={self.heads}")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel_width must be odd, got {self.kernel_width}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.coord_mode not in ("relative", "absolute"):
            raise ConfigError(f"unknown coord_mode {self.coord_mode!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossConfig(**{k: v for k, v in d.get("loss", {}).items()})
        return cls(**d)


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class STGraphModel:
    """Feature lift -> spatial/temporal attention GCN -> TCNN -> Gaussian field."""

    def __init__(self, config=None, seed=0):
        self.config = config or ModelConfig()
        c = self.config
        rng = make_rng([int(seed), 0x5EED])
        d = c.d_model
        self.lift_w = _uniform(rng, (N_GAUSS, D_IN, 1), D_IN)
        self.lift_b = Tensor(np.zeros(N_GAUSS), requires_grad=True)
        self.spatial_attn = AttentionParams.init(N_GAUSS, d, c.heads, rng)
        self.spatial_gcn = GcnLayerParams(_uniform(rng, (N_GAUSS, N_GAUSS), N_GAUSS), Tensor(0.25, requires_grad=True))
        self.mid_w = _uniform(rng, (d, N_GAUSS, 1), N_GAUSS)
        self.mid_b = Tensor(np.zeros(d), requires_grad=True)
        self.temporal_attn = AttentionParams.init(d, d, c.heads, rng)
        self.temporal_gcn = GcnLayerParams(_uniform(rng, (d, d), d), Tensor(0.25, requires_grad=True))
        self.reduce_w = _uniform(rng, (N_GAUSS, d, 1), d)
        self.reduce_b = Tensor(np.zeros(N_GAUSS), requires_grad=True)
        self.tcnn = TcnnParams.init(rng, c.kernel_width, c.tcnn_refine_layers)

    # -- parameter registry ------------------------------------------------
    def named_tensors(self):
        """Every tensor of the model, trainable or not, in a fixed order."""
        out = {"lift.weight": self.lift_w, "lift.bias": self.lift_b}
        for k, v in self.spatial_attn.named().items():
            out[f"spatial_attn.{k}"] = v
        out["spatial_gcn.weight"] = self.spatial_gcn.weight
        out["spatial_gcn.slope"] = self.spatial_gcn.slope
        out["mid.weight"] = self.mid_w
        out["mid.bias"] = self.mid_b
        for k, v in self.temporal_attn.named().items():
            out[f"temporal_attn.{k}"] = v
        out["temporal_gcn.weight"] = self.temporal_gcn.weight
        out["temporal_gcn.slope"] = self.temporal_gcn.slope
        out["reduce.weight"] = self.reduce_w
        out["reduce.bias"] = self.reduce_b
        out["tcnn.conv0.weight"] = self.tcnn.w0
        out["tcnn.conv0.bias"] = self.tcnn.b0
        for i, (w, b, s) in enumerate(self.tcnn.refine):
            out[f"tcnn.refine{i}.weight"] = w
            out[f"tcnn.refine{i}.bias"] = b
            out[f"tcnn.refine{i}.slope"] = s
        return out

    def named_parameters(self):
        return {k: v for k, v in self.named_tensors().items() if v.requires_grad}

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grads(self):
        ad.zero_grads(self.parameters())

    def gradients(self):
        """name -> gradient array (zeros where no gradient reached)."""
        return {k: (np.zeros(v.shape) if v.grad is None else v.grad) for k, v in self.named_parameters().items()}

    def load_state(self, tensors):
        mine = self.named_tensors()
        missing = sorted(set(mine) - set(tensors))
        extra = sorted(set(tensors) - set(mine))
        if missing or extra:
            raise IncompatibleCheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for k, t in mine.items():
            arr = np.asarray(tensors[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise IncompatibleCheckpointError(f"{k}: shape {arr.shape} != expected {t.shape}")
            t.data = arr.copy()

    # -- forward -------------------------------------------------------------
    def encode(self, obs):
        """(2, 8, N) observations -> (d_model, 8, N) graph features."""
        x = obs.values if hasattr(obs, "values") else ad.as_tensor(obs)
        if x.ndim != 3 or x.shape[0] != D_IN or x.shape[1] != T_IN:
            raise ValueError(f"observations must be ({D_IN}, {T_IN}, N), got {x.shape}")
        x = ad.conv_over_time(x, self.lift_w, self.lift_b)
        out, _ = st_block_forward(x, self.spatial_attn, self.temporal_attn, self.spatial_gcn,
                                  self.temporal_gcn, self.mid_w, self.mid_b, self.config.variant)
        return out

    def forward(self, obs):
        feats = self.encode(obs)
        reduced = ad.conv_over_time(feats, self.reduce_w, self.reduce_b)
        return to_gaussian_field(tcnn_forward(reduced, self.tcnn))

    __call__ = forward


def model_forward(obs, model):
    return model.forward(obs)


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(params, grads, lr, momentum=0.9, velocity=None):
    """Classic momentum: v <- m v + g; p <- p - lr v.

    ``params``/``grads``/``velocity`` are parallel lists of arrays; params and
    velocity are updated in place. Returns the velocity list.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v
    return velocity


class SGD:
    def __init__(self, named_params, momentum=0.9):
        self.params = dict(named_params)
        self.momentum = momentum
        self.velocity = {k: np.zeros(p.shape) for k, p in self.params.items()}

    def step(self, lr, scale=1.0, max_norm=None):
        """Apply one update from the accumulated ``.grad`` times ``scale``.

        With ``max_norm`` the scaled gradient is rescaled so its global L2
        norm does not exceed it. Returns the norm before clipping.
        """
        names = list(self.params)
        grads = [np.zeros(self.params[k].shape) if self.params[k].grad is None
                 else self.params[k].grad * scale for k in names]
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if max_norm is not None and norm > max_norm:
            grads = [g * (max_norm / norm) for g in grads]
        sgd_step([self.params[k].data for k in names], grads, lr, self.momentum,
                 [self.velocity[k] for k in names])
        return norm

    def zero_grads(self):
        ad.zero_grads(self.params.values())


# ---------------------------------------------------------------------------
# checkpoint container
#
# magic "STTC" | u32 version | u32 meta_len | meta JSON |
# u32 tensor_count | per tensor: u32 name_len, name, u32 rank, u32 dims..., f64 data |
# u32 crc32 of everything before it. All little-endian.


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = None
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _pack_tensor(name, arr):
    arr = np.asarray(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    raw = name.encode("utf-8")
    parts = [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(model, path, optimizer=None, epoch=0, rng_state=None, meta=None):
    """Write the model (and optional training state) atomically to ``path``."""
    header = {
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
        "rng_state": _jsonable(rng_state),
        "meta": _jsonable(meta or {}),
    }
    meta_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors = [(k, t.data) for k, t in model.named_tensors().items()]
    if optimizer is not None:
        tensors += [(f"velocity/{k}", v) for k, v in optimizer.velocity.items()]
    body = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes,
            struct.pack("<I", len(tensors))]
    body += [_pack_tensor(k, a) for k, a in tensors]
    blob = b"".join(body)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise IntegrityError("checkpoint is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes {blob[:4]!r}")
    r = _Reader(blob)
    r.take(4)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(blob) < 12:
        raise IntegrityError("checkpoint is truncated")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    meta_len = r.u32()
    meta_raw = r.take(meta_len)
    count = r.u32()
    tensors, velocity = {}, {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
        if name.startswith("velocity/"):
            velocity[name[len("velocity/"):]] = arr
        else:
            tensors[name] = arr
    if len(blob) - r.pos != 4:
        raise IntegrityError("checkpoint has a truncated or extended trailer")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError("checkpoint checksum mismatch")
    try:
        header = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint metadata is corrupt: {exc}") from None
    return Checkpoint(ModelConfig.from_dict(header["model_config"]), tensors, velocity,
                      header["epoch"], header.get("rng_state"), header.get("meta", {}), version)


def load_checkpoint(path):
    """Rebuild a model from ``path``; returns ``(model, checkpoint)``."""
    ckpt = read_checkpoint(path)
    model = STGraphModel(ckpt.config)
    model.load_state(ckpt.tensors)
    return model, ckpt
