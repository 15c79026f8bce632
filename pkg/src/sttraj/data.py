"""ETH/UCY-format trajectory files: loading, windowing and graph tensors."""
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import IntegrityError, ParseError

FRAME_INTERVAL = 0.4  # seconds between annotated frames
T_OBS = 8
T_PRED = 12
COORD_MODES = ("relative", "absolute")


@dataclass
class TrajectoryScene:
    """Per-frame pedestrian positions, sorted by (frame_id, ped_id)."""

    name: str
    frame_ids: np.ndarray
    ped_ids: np.ndarray
    xy: np.ndarray
    frame_interval: float = FRAME_INTERVAL

    def __len__(self):
        return len(self.frame_ids)

    @property
    def records(self):
        return [(int(f), int(p), float(x), float(y))
                for f, p, (x, y) in zip(self.frame_ids, self.ped_ids, self.xy)]

    @property
    def unique_frames(self):
        return np.unique(self.frame_ids)

    @property
    def pedestrians(self):
        return np.unique(self.ped_ids)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryScene):
            return NotImplemented
        return (self.name == other.name
                and np.array_equal(self.frame_ids, other.frame_ids)
                and np.array_equal(self.ped_ids, other.ped_ids)
                and np.array_equal(self.xy, other.xy))


@dataclass
class SequenceSample:
    obs: np.ndarray  # (N, T_OBS, 2) meters
    fut: np.ndarray  # (N, T_PRED, 2) meters
    ped_ids: list
    start_frame: int = 0

    @property
    def num_peds(self):
        return len(self.ped_ids)


@dataclass
class GraphTensor:
    values: Tensor  # (D, T, N)
    coord_mode: str = "relative"

    @property
    def shape(self):
        return self.values.shape


def _parse_int(token, lineno, what):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not a number", lineno) from None
    if not math.isfinite(value) or value != int(value):
        raise ParseError(f"{what} {token!r} is not an integer", lineno)
    return int(value)


def _parse_float(token, lineno, what):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not a number", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {token!r} is not finite", lineno)
    return value


def build_scene(name, records, frame_interval=FRAME_INTERVAL):
    """Sort ``(frame, ped, x, y)`` records into a scene, rejecting duplicates."""
    records = sorted(records, key=lambda r: (r[0], r[1]))
    for a, b in zip(records, records[1:]):
        if a[0] == b[0] and a[1] == b[1]:
            raise IntegrityError(f"duplicate record for frame {a[0]}, pedestrian {a[1]}")
    if records:
        frames = np.array([r[0] for r in records], dtype=np.int64)
        peds = np.array([r[1] for r in records], dtype=np.int64)
        xy = np.array([(r[2], r[3]) for r in records], dtype=np.float64)
    else:
        frames = np.zeros(0, dtype=np.int64)
        peds = np.zeros(0, dtype=np.int64)
        xy = np.zeros((0, 2))
    return TrajectoryScene(name, frames, peds, xy, frame_interval)


def load_scene(path, name=None):
    """Parse a whitespace-separated ``frame_id ped_id x y`` file."""
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    records = []
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 4:
                raise ParseError(f"expected 4 fields, found {len(tokens)}", lineno)
            records.append((
                _parse_int(tokens[0], lineno, "frame_id"),
                _parse_int(tokens[1], lineno, "ped_id"),
                _parse_float(tokens[2], lineno, "x"),
                _parse_float(tokens[3], lineno, "y"),
            ))
    return build_scene(name, records)


def save_scene(scene, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f, p, x, y in scene.records:
            fh.write(f"{f}\t{p}\t{x!r}\t{y!r}\n")


def window_sequences(scene, t_obs=T_OBS, t_pred=T_PRED, stride=1):
    """Cut a scene into fixed-length windows over its unique frames.

    A pedestrian joins a window only if present in every frame of it; windows
    without any such pedestrian are dropped.
    """
    total = t_obs + t_pred
    frames = scene.unique_frames
    if len(frames) < total:
        return []
    lookup = {}
    for f, p, xy in zip(scene.frame_ids, scene.ped_ids, scene.xy):
        lookup.setdefault(int(f), {})[int(p)] = xy
    samples = []
    for start in range(0, len(frames) - total + 1, stride):
        window = [int(f) for f in frames[start:start + total]]
        present = set(lookup[window[0]])
        for f in window[1:]:
            present &= lookup[f].keys()
        if not present:
            continue
        peds = sorted(present)
        pos = np.array([[lookup[f][p] for f in window] for p in peds])
        samples.append(SequenceSample(pos[:, :t_obs].copy(), pos[:, t_obs:].copy(), peds, window[0]))
    return samples


def to_relative(positions, origin=None):
    """Per-frame displacements along axis 1 of (N, T, 2) positions.

    The first displacement is taken from ``origin`` (N, 2) when given, else 0.
    """
    rel = np.zeros_like(positions)
    rel[:, 1:] = positions[:, 1:] - positions[:, :-1]
    if origin is not None:
        rel[:, 0] = positions[:, 0] - origin
    return rel


def from_relative(displacements, origin):
    """Inverse of :func:`to_relative`: cumulative sum from ``origin`` (N, 2)."""
    return origin[:, None, :] + np.cumsum(displacements, axis=1)


def to_graph_tensor(sample, coord_mode="relative"):
    """Return ``(obs, fut)`` graph tensors shaped (2, T, N).

    In relative mode the future displacements continue from the last observed
    position, so the first future step is a real displacement, not 0.
    """
    if coord_mode not in COORD_MODES:
        raise ValueError(f"unknown coord_mode {coord_mode!r}")
    if coord_mode == "relative":
        obs = to_relative(sample.obs)
        fut = to_relative(sample.fut, origin=sample.obs[:, -1])
    else:
        obs, fut = sample.obs, sample.fut
    return (GraphTensor(Tensor(np.transpose(obs, (2, 1, 0))), coord_mode),
            GraphTensor(Tensor(np.transpose(fut, (2, 1, 0))), coord_mode))


@dataclass
class PreparedSample:
    """A window with its model inputs and targets precomputed."""

    scene: str
    index: int
    sample: SequenceSample
    obs: GraphTensor
    fut: GraphTensor
    extras: dict = field(default_factory=dict)

    @property
    def fut_field_target(self):
        # (T_PRED, N, 2) in the graph tensor's coordinate mode
        return np.transpose(self.fut.values.data, (1, 2, 0))


def prepare_samples(scene, coord_mode="relative", stride=1):
    out = []
    for i, s in enumerate(window_sequences(scene, stride=stride)):
        obs, fut = to_graph_tensor(s, coord_mode)
        out.append(PreparedSample(scene.name, i, s, obs, fut))
    return out


def find_scene(scenes, name):
    for s in scenes:
        if s.name.lower() == name.lower():
            return s
    raise LookupError(f"unknown scene {name!r}; have {sorted(s.name for s in scenes)}")


def leave_one_out_split(scenes, test_name):
    """Hold out ``test_name``; the rest, ordered by name, form the training set."""
    test = find_scene(scenes, test_name)
    train = sorted((s for s in scenes if s is not test), key=lambda s: s.name)
    return train, test


def scene_files(dataset_dir):
    return sorted(os.path.join(dataset_dir, f) for f in os.listdir(dataset_dir)
                  if f.endswith(".txt") and os.path.isfile(os.path.join(dataset_dir, f)))


def load_dataset(dataset_dir, names=None):
    """Load every ``*.txt`` scene in a directory (or only ``names``)."""
    paths = {os.path.splitext(os.path.basename(p))[0]: p for p in scene_files(dataset_dir)}
    if names is None:
        return [load_scene(p, n) for n, p in sorted(paths.items())]
    by_lower = {n.lower(): n for n in paths}
    missing = [n for n in names if n.lower() not in by_lower]
    if missing:
        raise FileNotFoundError(f"scene files missing from {dataset_dir}: {', '.join(missing)}")
    return [load_scene(paths[by_lower[n.lower()]], by_lower[n.lower()]) for n in names]
