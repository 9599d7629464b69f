"""Compare the numba kernels with their numpy fallbacks.

Kernel timings run both implementations side by side in this process.  The
training-step timing launches one subprocess per backend so that the
``AMSRC_DISABLE_NUMBA`` flag selects the dispatch exactly as users would.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def best_ms(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e3


def kernel_rows(repeat):
    from amsrc import _kernels as K

    if not K.HAS_NUMBA:
        sys.exit("numba is unavailable (or AMSRC_DISABLE_NUMBA is set); nothing to compare")
    r = np.random.default_rng(0)
    x = r.random((32, 32, 32, 32), dtype=np.float32)  # one batch of 32 STCs at the widest layer
    cols = K.im2col_numpy(x, 3, 1, 1)
    cols2 = K.im2col_numpy(x, 3, 2, 1)
    frame_a = r.random((64, 64))
    frame_b = np.roll(frame_a, 2, axis=1)
    cases = [
        ("im2col 32x32x32x32 k3", lambda: K.im2col_numpy(x, 3, 1, 1), lambda: K.im2col_numba(x, 3, 1, 1)),
        ("col2im 32x32x32x32 k3", lambda: K.col2im_numpy(cols, x.shape, 3, 1, 1), lambda: K.col2im(cols, x.shape, 3, 1, 1)),
        ("col2im 32x32x32x32 k3 s2", lambda: K.col2im_numpy(cols2, x.shape, 3, 2, 1),
         lambda: K.col2im(cols2, x.shape, 3, 2, 1)),
        ("block SAD 64x64 b8 r4", lambda: K.block_sad_numpy(frame_a, frame_b, 8, 4), lambda: K.block_sad(frame_a, frame_b, 8, 4)),
    ]
    rows = []
    for name, np_fn, nb_fn in cases:
        nb_fn()  # compile outside the timing
        a, b = np_fn(), nb_fn()
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.allclose(u, v), f"{name}: backends disagree"
        rows.append({"case": name, "numpy_ms": best_ms(np_fn, repeat), "numba_ms": best_ms(nb_fn, repeat)})
    return rows


def train_step_ms(repeat):
    """Time one optimizer step on a 32-STC batch with the full-size model (runs in a child)."""
    from amsrc import _kernels as K
    from amsrc import model as M
    from amsrc import training as T
    from amsrc.data import STCSet
    from amsrc.losses import LossWeights

    r = np.random.default_rng(0)
    n = 32
    stcs = STCSet(r.random((n, 5, 32, 32), dtype=np.float32), r.normal(0, 1, (n, 4, 2, 32, 32)).astype(np.float32),
                  np.array(["c"] * n), np.arange(n), np.zeros(n, int))
    params = M.init_params(M.Architecture(), seed=0)
    opt = T.Adam(params)
    idx = np.arange(n)
    T.train_step(params, opt, stcs, idx, LossWeights(), 1e-6)  # warm-up and jit
    return K.BACKEND, best_ms(lambda: T.train_step(params, opt, stcs, idx, LossWeights(), 1e-6), repeat)


def step_rows(repeat):
    rows = {}
    for disabled in ("0", "1"):
        env = dict(os.environ, AMSRC_DISABLE_NUMBA=disabled)
        out = subprocess.run([sys.executable, __file__, "--child-step", "--repeat", str(repeat)],
                             env=env, check=True, capture_output=True, text=True).stdout
        backend, ms = json.loads(out.strip().splitlines()[-1])
        rows["numba_ms" if disabled == "0" else "numpy_ms"] = ms
        rows.setdefault("backends", []).append(backend)
    assert rows["backends"] == ["numba", "numpy"], f"env flag not honoured: {rows['backends']}"
    return {"case": "train step, batch 32, full model", "numpy_ms": rows["numpy_ms"], "numba_ms": rows["numba_ms"]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    ap.add_argument("--skip-step", action="store_true", help="kernels only")
    ap.add_argument("--child-step", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child_step:
        print(json.dumps(train_step_ms(args.repeat)))
        return
    rows = kernel_rows(args.repeat)
    if not args.skip_step:
        rows.append(step_rows(max(2, args.repeat // 2)))
    print(f"{'case':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['case']:36s} {r['numpy_ms']:10.2f} {r['numba_ms']:10.2f} {r['numpy_ms'] / r['numba_ms']:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
