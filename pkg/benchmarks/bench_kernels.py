"""Time the compiled and numpy kernel backends on model-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from sttraj import kernels

CASES = {
    # decoder conv: 8 input steps -> 12 output steps over 5 features, N pedestrians
    "conv_forward N=8": lambda rng: ("conv_time_forward", (rng.normal(size=(8, 5, 8)), rng.normal(size=(12, 8, 3)),
                                                          rng.normal(size=12))),
    "conv_backward N=8": lambda rng: ("conv_time_backward", (rng.normal(size=(8, 5, 8)), rng.normal(size=(12, 8, 3)),
                                                            rng.normal(size=(12, 5, 8)))),
    "conv_forward N=64": lambda rng: ("conv_time_forward", (rng.normal(size=(16, 8, 64)),
                                                           rng.normal(size=(16, 16, 3)), rng.normal(size=16))),
    # MMD between 12*N ground-truth points and 4x as many samples
    "mmd N=4": lambda rng: ("mmd_rbf", (rng.normal(size=(48, 2)), rng.normal(size=(192, 2)),
                                        (0.25, 0.5, 1.0, 2.0, 4.0))),
    "mmd N=16": lambda rng: ("mmd_rbf", (rng.normal(size=(192, 2)), rng.normal(size=(768, 2)),
                                         (0.25, 0.5, 1.0, 2.0, 4.0))),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'case':<20}" + "".join(f"{n + ' (us)':>16}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for case, make in CASES.items():
        fn_name, inputs = make(np.random.default_rng(0))
        times = {}
        for n in names:
            fn = getattr(kernels.get_backend(n), fn_name)
            fn(*inputs)
            times[n] = min(timeit.repeat(lambda: fn(*inputs), number=args.repeat, repeat=3)) / args.repeat * 1e6
        line = f"{case:<20}" + "".join(f"{times[n]:>16.1f}" for n in names)
        if len(names) > 1:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
