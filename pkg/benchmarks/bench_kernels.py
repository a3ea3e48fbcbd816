"""Time each hot kernel under the numba and numpy backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from coopsim import kernels


def cases(rng):
    yaw = 0.3
    c, s = np.cos(yaw), np.sin(yaw)
    boxes = np.column_stack([rng.uniform(-40, 40, 20), rng.uniform(-40, 40, 20), rng.uniform(-np.pi, np.pi, 20),
                             rng.uniform(1, 6, 20), rng.uniform(1, 3, 20)])
    return {
        "hungarian": (rng.random((20, 20)),),
        "sample_grid": (rng.random((200, 200)), -50.0, -50.0, 0.5, 200, 200, -50.0, -50.0, 0.5,
                        c, -s, s, c, 1.5, -2.0, False),
        "rasterize_boxes": (boxes, -50.0, -50.0, 0.5, 200, 200),
        "box_hits": (rng.random((200, 200)) < 0.1, boxes, -50.0, -50.0, 0.5),
        "rasterize_segments": (rng.uniform(-50, 50, (40, 4)), 0.5, -50.0, -50.0, 0.5, 200, 200),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    backends = ["numpy"] + (["numba"] if kernels.NUMBA_AVAILABLE else [])
    print(f"{'kernel':<20}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, call_args in cases(np.random.default_rng(0)).items():
        times = []
        for backend in backends:
            fn = kernels.implementation(name, backend)
            fn(*call_args)  # warm up, compiles under numba
            best = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
            times.append(best * 1e3)
        speedup = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
        print(f"{name:<20}" + "".join(f"{t:>12.3f}" for t in times) + speedup)


if __name__ == "__main__":
    main()
