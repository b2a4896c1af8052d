"""Benchmark the compiled temporal-convolution kernels against the numpy
fallback, plus an end-to-end training step under each backend.

Usage: python benchmarks/bench_kernels.py [--steps 20]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from gaitrig.kernels import available_backends

SHAPES = [
    # (N, T, V, C, width, stride)  -- training-sized temporal conv inputs
    (16, 60, 16, 32, 9, 1),
    (16, 60, 16, 32, 9, 2),
    (16, 30, 16, 64, 9, 1),
    (16, 15, 16, 128, 9, 1),
    (32, 30, 16, 64, 9, 2),
]

STEP_SCRIPT = r"""
import time
import numpy as np
import gaitrig.engine as E
import gaitrig.kernels
from gaitrig.engine import Tensor
from gaitrig.network import GaitModel

model = GaitModel(channel_plan=((3, 16, 1), (16, 32, 2), (32, 64, 2)),
                  t_frames=30, embed_dim=32, seed=1)
x = Tensor(np.random.default_rng(0).normal(size=(16, 3, 30, 16)).astype(np.float32))

def step():
    emb = model.forward(x, x, training=True)
    loss = E.tsum(E.mul(emb, emb))
    for p in model.parameters():
        p.zero_grad()
    loss.backward()

step()
n = int({steps})
t0 = time.perf_counter()
for _ in range(n):
    step()
dt = (time.perf_counter() - t0) / n
print("{{}} {{:.1f}}".format(gaitrig.kernels.BACKEND, dt * 1e3))
"""


def time_call(fn, *args, repeats=30):
    fn(*args)  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_kernels():
    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    print(f"{'shape (N,T,V,C,w,s)':>28} {'op':>8} "
          + " ".join(f"{name:>10}" for name in backends) + "  speedup")
    rng = np.random.default_rng(0)
    for shape in SHAPES:
        n, t, v, c, width, stride = shape
        x = rng.normal(size=(n, t, v, c)).astype(np.float32)
        pad = (width - 1) // 2
        times = {}
        for name, mod in backends.items():
            times[name] = time_call(mod.temporal_im2col, x, width, stride, pad)
        cols = list(backends.values())[0].temporal_im2col(x, width, stride, pad)
        ratio = times["numpy"] / times.get("compiled", times["numpy"])
        print(f"{str(shape):>28} {'im2col':>8} "
              + " ".join(f"{times[k]*1e3:>8.2f}ms" for k in backends)
              + f"  {ratio:5.2f}x")
        g = rng.normal(size=cols.shape).astype(np.float32)
        times = {}
        for name, mod in backends.items():
            times[name] = time_call(mod.temporal_col2im, g, width, stride, pad, t)
        ratio = times["numpy"] / times.get("compiled", times["numpy"])
        print(f"{str(shape):>28} {'col2im':>8} "
              + " ".join(f"{times[k]*1e3:>8.2f}ms" for k in backends)
              + f"  {ratio:5.2f}x")


def bench_train_step(steps: int):
    print("\nend-to-end training step (small plan, batch 16, T=30):")
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, GAITRIG_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, "-c", STEP_SCRIPT.format(steps=steps)],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            print(f"  {backend:>9}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        name, ms = proc.stdout.split()
        print(f"  {name:>9}: {ms} ms/step")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=20)
    args = parser.parse_args()
    bench_kernels()
    bench_train_step(args.steps)
