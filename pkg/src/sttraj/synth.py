"""Synthetic scenes with known dynamics, written in the ETH/UCY text format."""
import os

import numpy as np

from .data import build_scene, save_scene
from .losses import make_rng

KINDS = ("linear", "crossing", "group")
FRAME_STEP = 10  # frame ids advance by 10 per annotated frame, as in ETH/UCY


def _linear(rng, n_frames=2400, n_peds=180):
    records = []
    for pid in range(n_peds):
        start = int(rng.integers(0, n_frames - 20))
        life = int(rng.integers(20, 36))
        heading = rng.uniform(0, 2 * np.pi)
        v = rng.uniform(0.25, 0.55) * np.array([np.cos(heading), np.sin(heading)])
        p0 = rng.uniform(-5, 5, size=2)
        for k in range(life):
            f = start + k
            if f >= n_frames:
                break
            x, y = p0 + k * v
            records.append((f * FRAME_STEP, pid, float(x), float(y)))
    return records


def _crossing(rng, n_frames=80, n_pairs=4):
    # Pairs meet at a common point 10 frames into their shared 20-frame span.
    records = []
    for pair in range(n_pairs):
        start = int(rng.integers(0, n_frames - 20))
        meet = rng.uniform(-4, 4, size=2)
        base = rng.uniform(0, 2 * np.pi)
        for j, angle in enumerate((base, base + rng.uniform(np.pi / 3, 2 * np.pi / 3))):
            speed = rng.uniform(0.3, 0.5)
            v = speed * np.array([np.cos(angle), np.sin(angle)])
            for k in range(20):
                x, y = meet + (k - 10) * v
                records.append(((start + k) * FRAME_STEP, 2 * pair + j, float(x), float(y)))
    return records


def _group(rng, n_frames=80, n_groups=3, size=3):
    # Small groups walking side by side at a shared velocity.
    records = []
    pid = 0
    for _ in range(n_groups):
        start = int(rng.integers(0, n_frames - 20))
        life = int(rng.integers(20, 30))
        angle = rng.uniform(0, 2 * np.pi)
        v = rng.uniform(0.25, 0.5) * np.array([np.cos(angle), np.sin(angle)])
        side = np.array([-v[1], v[0]]) / np.linalg.norm(v)
        p0 = rng.uniform(-5, 5, size=2)
        for m in range(size):
            offset = side * 0.6 * (m - (size - 1) / 2)
            for k in range(life):
                f = start + k
                if f >= n_frames:
                    break
                x, y = p0 + offset + k * v
                records.append((f * FRAME_STEP, pid, float(x), float(y)))
            pid += 1
    return records


_GENERATORS = {"linear": _linear, "crossing": _crossing, "group": _group}


def synth_scene(kind, index=0, seed=0):
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    rng = make_rng([int(seed), KINDS.index(kind), int(index)])
    return build_scene(f"{kind}{index}", _GENERATORS[kind](rng))


def write_synthetic(out_dir, kind, n_scenes, seed=0):
    """Write ``n_scenes`` files ``<kind><i>.txt`` into ``out_dir``; returns paths."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i in range(n_scenes):
        scene = synth_scene(kind, i, seed)
        path = os.path.join(out_dir, f"{scene.name}.txt")
        save_scene(scene, path)
        paths.append(path)
    return paths
