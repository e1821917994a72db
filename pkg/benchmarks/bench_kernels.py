"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--envs 64] [--repeat 5]

Prints per-call times for each hot kernel and for a full batched environment
step, and the speed-up of the compiled backend over the fallback.
"""

import argparse
import timeit

import numpy as np

from lidtwist import kernels
from lidtwist.config import load_config
from lidtwist.env import VecLidEnv
from lidtwist.geometry import make_lid_frames
from lidtwist.hand import NUM_JOINTS, build_kinematics


def kernel_cases(n, rng):
    kin = build_kinematics()
    frames = make_lid_frames("cylinder", 0.04, 8).points
    sensors = rng.uniform(-0.05, 0.05, (n, 45, 3))
    frame_sets = np.broadcast_to(frames, (n, 8, 3)).copy()
    dist = rng.uniform(0.0, 0.01, (n, 5, 9))
    q = rng.uniform(kin.lower, kin.upper, (n, NUM_JOINTS))
    z = np.zeros(n)
    torque = rng.normal(0.0, 0.01, n)
    fric = np.full(n, 0.004)
    return {
        "min_distances": lambda b: b.min_distances(sensors, frame_sets),
        "grade_contacts": lambda b: b.grade_contacts(dist, 0.005),
        "finger_forward": lambda b: b.finger_forward(q, kin.base, kin.azimuth, kin.joint_start, kin.joint_count, kin.links, kin.cap),
        "step_lid": lambda b: b.step_lid(z, z, torque, fric, 0.003, 2e-4, 0.0166),
    }


def env_case(n, backend):
    cfg = load_config(overrides=["encoder.mode=passthrough"])
    env = VecLidEnv(cfg, num_envs=n, backend=backend)
    env.reset()
    rng = np.random.default_rng(0)
    actions = rng.uniform(-0.2, 0.2, (n, NUM_JOINTS))
    return lambda: env.step(actions)


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.envs, rng)
    rows = []
    for name, fn in cases.items():
        times = {b: best_of(lambda: fn(kernels.get_backend(b)), args.repeat) for b in names}
        rows.append((name, times))
    times = {b: best_of(env_case(args.envs, b), args.repeat) for b in names}
    rows.append((f"env step (N={args.envs})", times))

    header = f"{'kernel':<22}" + "".join(f"{b + ' [us]':>14}" for b in names)
    if len(names) > 1:
        header += f"{'speed-up':>10}"
    print(header)
    for name, t in rows:
        line = f"{name:<22}" + "".join(f"{t[b] * 1e6:>14.1f}" for b in names)
        if len(names) > 1:
            line += f"{t['numpy'] / t['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
