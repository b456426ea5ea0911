"""Compare the numba and numpy paths of every kernel on realistic inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from activepose import kernels as K
from activepose.scenesim import SceneConfig, _capsules, generate_scene


def best_of(fn, args, repeats):
    fn(*args)  # warm-up (triggers compilation for the numba path)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    scene = generate_scene(SceneConfig(persons=(7, 7), n_occluders=3), 0)
    cap_a, cap_b, cap_r = _capsules(scene, 0)
    joints = scene.poses(0)
    cam = scene.rig[0].position_mm
    yield "blocked_joints (7 persons, 3 spheres)", K.blocked_joints_numba, K.blocked_joints_numpy, (
        joints, cam, cap_a, cap_b, cap_r, scene.occluders * 1000.0)

    dirs = scene.rig.directions
    target = np.array([0.3, 0.2, 0.93])
    yield "nearest_direction (30 cameras)", K.nearest_direction_numba, K.nearest_direction_numpy, (dirs, target)

    rng = np.random.default_rng(0)
    for n in (7, 30):
        cost = rng.uniform(0, 1, (n, n))
        yield f"hungarian ({n}x{n})", K.hungarian_numba, K.hungarian_numpy, (cost,)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeats", type=int, default=200)
    args = p.parse_args(argv)
    print(f"{'kernel':<40}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, fast, slow, kargs in cases():
        a = np.asarray(fast(*kargs))
        b = np.asarray(slow(*kargs))
        assert np.array_equal(a, b), name
        tf, ts = best_of(fast, kargs, args.repeats), best_of(slow, kargs, args.repeats)
        print(f"{name:<40}{tf * 1e6:>12.1f}{ts * 1e6:>12.1f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
