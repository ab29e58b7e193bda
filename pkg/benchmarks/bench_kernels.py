#!/usr/bin/env python3
"""Compare the numba Langevin kernel against the pure-numpy path.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Each case refines ``chains`` actions for one full ``LangevinConfig`` (100
steps by default) on a random energy model, once per backend, and reports the
mean wall time, speedup and the largest disagreement between the two paths.
"""

import argparse
import os
import time

import numpy as np

from gazeibc import _kernels
from gazeibc.data import ActionBounds
from gazeibc.policy import EbmPolicy, LangevinConfig, langevin_refine, sample_uniform_actions

CASES = [  # (hidden width, chains)
    (64, 64),
    (128, 64),
    (256, 64),
    (64, 1024),   # a training batch: 64 items x 16 negatives
    (128, 2048),
]


def time_refine(policy, obs, init, cfg, flag, repeats):
    os.environ["GAZEIBC_NUMBA"] = flag
    langevin_refine(policy, obs, init, cfg, np.random.default_rng(5))  # warm up / compile
    start = time.perf_counter()
    for _ in range(repeats):
        out = langevin_refine(policy, obs, init, cfg, np.random.default_rng(5))
    return (time.perf_counter() - start) / repeats, out.actions


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--obs-dim", type=int, default=16)
    args = parser.parse_args()
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    bounds = ActionBounds(np.array([-0.1, -0.05]), np.array([0.2, 0.05]))
    cfg = LangevinConfig()
    print(f"{'hidden':>6} {'chains':>6} {'numba s':>9} {'numpy s':>9} {'speedup':>8} {'max diff':>9}")
    for width, chains in CASES:
        policy = EbmPolicy.create(args.obs_dim, bounds, rng, hidden_dims=(width, width),
                                  dropout_rate=0.0)
        obs = rng.normal(size=(chains, args.obs_dim))
        init = sample_uniform_actions(bounds, chains, rng)
        t_nb, a_nb = time_refine(policy, obs, init, cfg, "1", args.repeats)
        t_np, a_np = time_refine(policy, obs, init, cfg, "0", args.repeats)
        print(f"{width:>6} {chains:>6} {t_nb:>9.4f} {t_np:>9.4f} {t_np / t_nb:>7.1f}x "
              f"{np.abs(a_nb - a_np).max():>9.1e}")


if __name__ == "__main__":
    main()
