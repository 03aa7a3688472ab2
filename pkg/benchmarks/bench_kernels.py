"""Compare the compiled kernels with the numpy reference.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]

Prints per-kernel timings at the default encoder sizes (72 residues, d_m 64,
16 Gaussian channels, float32) and the time of one pretraining loss plus
backward pass under each backend.  The end-to-end numbers come from child
processes, because the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sao import _kernels_py as ref

try:
    from sao import _kernels_c as fast
except ImportError:
    fast = None

N_RES, D_M, D_PE = 72, 64, 16

STEP_SNIPPET = """
import time
import numpy as np
from sao import diffcore as dc, kernels, trainer
from sao.synth import PerturbationConfig, perturb, synth_protein
cfg = trainer.TrainConfig()
state = trainer.init_model(cfg)
pair = perturb(synth_protein(72, 1), PerturbationConfig(seed=2))
times = []
with dc.precision(cfg.dtype):
    for i in range({repeat}):
        t = time.perf_counter()
        loss, _ = trainer.pretrain_loss(state, pair, i)
        dc.backward(loss, state.online)
        times.append(time.perf_counter() - t)
print(kernels.BACKEND, np.median(times))
"""


def cases(rng):
    f32 = np.float32
    a = rng.normal(size=(N_RES, D_M)).astype(f32)
    b = rng.normal(size=(N_RES, D_M)).astype(f32)
    bias = rng.normal(size=D_M).astype(f32)
    g_pair = rng.normal(size=(N_RES, N_RES, D_M)).astype(f32)
    x = rng.normal(size=(N_RES, 2 * D_M)).astype(f32)
    dist = rng.uniform(0, 30, size=(N_RES, N_RES)).astype(f32)
    mu = np.linspace(0, 20, D_PE).astype(f32)
    sigma = np.ones(D_PE, dtype=f32)
    v = rng.normal(size=(N_RES, 3))
    g_rot = rng.normal(size=(N_RES, 3, 3))

    def pair_both(mod):
        out, cache = mod.pair_hidden_forward(a, b, bias)
        mod.pair_hidden_backward(cache, g_pair)

    def gelu_both(mod):
        out, cache = mod.gelu_forward(x)
        mod.gelu_backward(cache, x)

    def so3_both(mod):
        r = mod.so3_exp(v)
        mod.so3_exp_grad(v, r, g_rot)

    return {
        "pair_hidden fwd+bwd": pair_both,
        "gelu fwd+bwd": gelu_both,
        "gaussian_density": lambda mod: mod.gaussian_density(dist, mu, sigma),
        "so3_exp + grad": so3_both,
    }


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(repeat):
    rows = []
    for pure in ("", "1"):
        env = dict(os.environ)
        env.pop("SAO_PURE_PYTHON", None)
        if pure:
            env["SAO_PURE_PYTHON"] = pure
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        rows.append((backend, float(secs)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if fast is None:
        print("compiled extension not built; only the reference is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases(rng).items():
        t_py = bench(lambda: fn(ref), args.repeat)
        if fast is None:
            print(f"{name:<22}{1e3 * t_py:>12.3f}{'-':>14}{'-':>10}")
            continue
        t_c = bench(lambda: fn(fast), args.repeat)
        print(f"{name:<22}{1e3 * t_py:>12.3f}{1e3 * t_c:>14.3f}{t_py / t_c:>9.2f}x")
    print()
    print("one pretraining loss + backward (72 residues, default encoder), median seconds")
    for backend, secs in end_to_end(max(3, args.repeat // 4)):
        print(f"  {backend:<10}{secs:.4f}")


if __name__ == "__main__":
    main()
