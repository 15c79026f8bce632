import os

import numpy as np

from sttraj.data import build_scene, save_scene


def tiny_scene(name, seed, n_frames=26, n_peds=3):
    rng = np.random.default_rng(seed)
    recs = []
    for p in range(n_peds):
        v = rng.uniform(-0.4, 0.4, size=2)
        p0 = rng.uniform(-2, 2, size=2)
        for f in range(n_frames):
            recs.append((10 * f, p, *(p0 + f * v + rng.normal(scale=0.01, size=2))))
    return build_scene(name, recs)


def tiny_dataset(directory, names=("alpha", "beta", "gamma")):
    os.makedirs(directory, exist_ok=True)
    scenes = []
    for i, name in enumerate(names):
        s = tiny_scene(name, i)
        save_scene(s, os.path.join(directory, f"{name}.txt"))
        scenes.append(s)
    return scenes


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()
