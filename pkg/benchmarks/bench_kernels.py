"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--dtype float32]

Each row is one forward+backward pair at a shape typical of the small
models this package trains. Prints milliseconds per call for both backends
and the speedup. Exits 1 if the compiled extension is not built.
"""
import argparse
import sys
import timeit

import numpy as np

from docnmt.numerics import _pykernels

try:
    from docnmt.numerics import _ckernels
except ImportError:
    _ckernels = None


def cases(dtype, rng):
    B, H, L, d, V = 32, 4, 48, 64, 4000
    scores = rng.normal(size=(B * H * L, L)).astype(dtype)
    mask = np.zeros(scores.shape, dtype=np.uint8)
    mask[:, L // 2:] = rng.random((scores.shape[0], L - L // 2)) < 0.5
    x = rng.normal(size=(B * L, d)).astype(dtype)
    gain = np.ones(d, dtype)
    bias = np.zeros(d, dtype)
    logits = rng.normal(size=(B * 24, V)).astype(dtype)
    targets = rng.integers(0, V, size=B * 24).astype(np.int64)
    gloss = np.full(B * 24, 1.0 / (B * 24), dtype)
    ffn = rng.normal(size=(B * L, 4 * d)).astype(dtype)

    def softmax(k):
        y = k.softmax_fwd(scores, mask)
        k.softmax_bwd(y, scores)

    def layernorm(k):
        y, xhat, rstd = k.layernorm_fwd(x, gain, bias, 1e-6)
        k.layernorm_bwd(y, xhat, rstd, gain)

    def gelu(k):
        k.gelu_fwd(ffn)
        k.gelu_bwd(ffn, ffn)

    def xent(k):
        _, probs = k.xent_fwd(logits, targets, 0.1)
        k.xent_bwd(probs, targets, 0.1, gloss)

    return [
        (f"masked softmax {scores.shape}", softmax),
        (f"layer norm {x.shape}", layernorm),
        (f"gelu {ffn.shape}", gelu),
        (f"cross-entropy {logits.shape}", xent),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel (fwd+bwd)':<40} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(np.dtype(args.dtype), rng):
        times = []
        for k in (_pykernels, _ckernels):
            fn(k)  # warm up
            times.append(min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3)
        print(f"{name:<40} {times[0]:>10.3f} {times[1]:>10.3f} {times[0] / times[1]:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
