"""Timing comparison: compiled conv/pool kernels vs the numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--batch 64] [--repeats 5]

Part one times each kernel (im2col, col2im, maxpool fwd/bwd) on the
per-block shapes of the default model at 64x98 log-mel input and checks
both backends agree on the result.  Part two times a full training step
(embed + classify + joint loss + backward) once per backend; the backend
is frozen at import time, so each side runs in a subprocess with
TELKIT_KERNELS set.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from telkit.kernels import reference

try:
    from telkit.kernels import _native as native
except ImportError:
    native = None

# (channels_in, height, width) seen by each conv block of the default
# model on a (64, 98) input; every block is k=3, s=1, p=1 with 2x2 pool
BLOCK_SHAPES = [(1, 64, 98), (16, 32, 49), (32, 16, 24), (64, 8, 12)]
BLOCK_CHANNELS_OUT = [16, 32, 64, 128]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(batch, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for (c, h, w), c_out in zip(BLOCK_SHAPES, BLOCK_CHANNELS_OUT):
        x = rng.standard_normal((batch, c, h, w), dtype=np.float32)
        cols_ref = reference.im2col(x, 3, 3, 1, 1, 1, 1)
        pooled = rng.standard_normal((batch, c_out, h, w), dtype=np.float32)
        out_ref, idx_ref = reference.maxpool_fwd(pooled, 2)
        g = rng.standard_normal(out_ref.shape, dtype=np.float32)

        cases = [
            (f"im2col  {batch}x{c}x{h}x{w}",
             lambda b=None: reference.im2col(x, 3, 3, 1, 1, 1, 1),
             (lambda b=None: native.im2col(x, 3, 3, 1, 1, 1, 1)) if native else None,
             cols_ref),
            (f"col2im  {batch}x{c}x{h}x{w}",
             lambda b=None: reference.col2im(cols_ref, x.shape, 3, 3, 1, 1, 1, 1),
             (lambda b=None: native.col2im(cols_ref, x.shape, 3, 3, 1, 1, 1, 1)) if native else None,
             reference.col2im(cols_ref, x.shape, 3, 3, 1, 1, 1, 1)),
            (f"pool_f  {batch}x{c_out}x{h}x{w}",
             lambda b=None: reference.maxpool_fwd(pooled, 2)[0],
             (lambda b=None: native.maxpool_fwd(pooled, 2)[0]) if native else None,
             out_ref),
            (f"pool_b  {batch}x{c_out}x{h}x{w}",
             lambda b=None: reference.maxpool_bwd(g, idx_ref, pooled.shape),
             (lambda b=None: native.maxpool_bwd(g, idx_ref, pooled.shape)) if native else None,
             reference.maxpool_bwd(g, idx_ref, pooled.shape)),
        ]
        for name, ref_fn, nat_fn, expect in cases:
            t_ref = best_of(ref_fn, repeats)
            if nat_fn is None:
                rows.append((name, t_ref, None, None))
                continue
            got = nat_fn()
            if not np.array_equal(np.asarray(got), np.asarray(expect)):
                raise AssertionError(f"backend mismatch in {name}")
            t_nat = best_of(nat_fn, repeats)
            rows.append((name, t_ref, t_nat, t_ref / t_nat))
    return rows


_STEP_SCRIPT = """
import json, os, time
import numpy as np
import telkit.autodiff as ad
from telkit import kernels
from telkit.losses import mine_triplets, tel_loss
from telkit.model import ModelConfig, init_model

batch = int(os.environ["BENCH_BATCH"])
repeats = int(os.environ["BENCH_REPEATS"])
rng = np.random.default_rng(0)
x = rng.standard_normal((batch, 1, 64, 98), dtype=np.float32)
y = rng.integers(0, 10, size=batch)
model = init_model(ModelConfig(input_shape=(64, 98), n_classes=10), seed=0)

def step():
    model.zero_grad()
    emb = model.embed(x)
    logits = model.classify(emb)
    ts = mine_triplets(emb.data, y)
    total, _ = tel_loss(logits, y, emb, ts)
    ad.backward(total)

step()
times = []
for _ in range(repeats):
    t0 = time.perf_counter()
    step()
    times.append(time.perf_counter() - t0)
print(json.dumps({"backend": kernels.BACKEND, "best_s": min(times)}))
"""


def bench_step(batch, repeats, backend):
    env = dict(os.environ, TELKIT_KERNELS=backend,
               BENCH_BATCH=str(batch), BENCH_REPEATS=str(repeats))
    out = subprocess.run([sys.executable, "-c", _STEP_SCRIPT], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"kernel timings, float32, best of {args.repeats} "
          f"(numpy vs {'cython' if native else 'cython [not built]'})")
    print(f"{'case':>24} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, t_ref, t_nat, speedup in bench_kernels(args.batch, args.repeats):
        if t_nat is None:
            print(f"{name:>24} {t_ref * 1e3:10.2f} {'-':>10} {'-':>8}")
        else:
            print(f"{name:>24} {t_ref * 1e3:10.2f} {t_nat * 1e3:10.2f} {speedup:7.2f}x")

    print()
    print(f"full training step (batch {args.batch}, default model, joint loss)")
    for backend in ("numpy",) + (("cython",) if native else ()):
        r = bench_step(args.batch, args.repeats, backend)
        print(f"{r['backend']:>24} {r['best_s'] * 1e3:10.1f} ms")


if __name__ == "__main__":
    main()
