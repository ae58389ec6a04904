"""Compiled vs numpy kernels, plus the cost of bounding one toy step.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--sizes 64 256 1024]
"""

import argparse
import timeit

import numpy as np

from storybooth import kernels
from storybooth.harness.toy import StepContext, ToyDenoiserConfig, initial_latents, toy_denoise_step
from storybooth.masks import DropoutParams, TokenGrid
from storybooth.plan import StoryPrompt, mock_plan


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(sizes, repeat):
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend
    rng = np.random.default_rng(0)
    rows = []
    for n in sizes:
        scores = rng.normal(size=(n, n))
        bits = (rng.random((n, n)) < 0.2).astype(np.uint8)
        np.fill_diagonal(bits, 1)
        words = rng.integers(0, 4, n).astype(np.uint64)
        draws = rng.random((n, n))
        gate = rng.random((n, n))
        frames = 4 if n % 4 == 0 else 1
        cases = {
            "masked_softmax": lambda k: k.masked_softmax(scores, bits),
            "region_mask": lambda k: k.region_mask(words, draws, 0.9),
            "gated_argmax": lambda k: k.gated_argmax(gate, frames, n // frames),
        }
        for name, call in cases.items():
            times = {b: _best(lambda k=k: call(k), repeat) for b, k in backends.items()}
            rows.append((name, n, times))
    return rows


def bench_step(repeat):
    plan = mock_plan(StoryPrompt("a dog and a duck", 4), 2, 0)
    cfg = ToyDenoiserConfig(grid=TokenGrid(8, 8, 4))
    ctx = StepContext.build(plan, cfg)
    z = initial_latents(cfg, 0)
    d = DropoutParams(0.9, seed=1)
    out = {}
    for bounding in ("off", "intra", "cross"):
        out[bounding] = _best(lambda: toy_denoise_step(z, 800, ctx, bounding=bounding, dropout=d), repeat)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    args = ap.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<16}{'n':>6}{'python ms':>12}{'compiled ms':>13}{'speedup':>9}")
    for name, n, t in bench_kernels(args.sizes, args.repeat):
        py = t["python"] * 1e3
        cc = t.get("compiled")
        cc_txt = f"{cc * 1e3:>13.3f}{py / (cc * 1e3):>8.1f}x" if cc else f"{'-':>13}{'-':>9}"
        print(f"{name:<16}{n:>6}{py:>12.3f}{cc_txt}")

    step = bench_step(args.repeat)
    print("\ntoy step, 4 frames x 64 tokens (ms):")
    for bounding, t in step.items():
        print(f"  bounding={bounding:<6}{t * 1e3:8.2f}  ({t / step['off']:.2f}x plain)")


if __name__ == "__main__":
    main()
