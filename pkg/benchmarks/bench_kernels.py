"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both modules are imported directly, so the env var that forces the
fallback does not matter here. Prints one line per (kernel, shape).
"""

import argparse
import timeit

import numpy as np

from qmpher.nn import _kernels_py, init_mlp

try:
    from qmpher.nn import _kernels
except ImportError:
    _kernels = None

# (label, layer sizes, batch): single-sample rows are the Q-switch scoring path,
# batched rows are the optimization path
CASES = [
    ("actor 1x", [20, 64, 64, 64, 4], 1),
    ("critic 7x", [24, 64, 64, 64, 1], 7),
    ("critic 256x", [24, 64, 64, 64, 1], 256),
    ("critic 256x wide", [24, 256, 256, 256, 1], 256),
]


def _bench_case(mod, sizes, batch, number, repeat):
    rng = np.random.default_rng(0)
    net = init_mlp(sizes, rng, "tanh")
    x = rng.standard_normal((batch, sizes[0]))
    gw = [np.zeros_like(w) for w in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]
    y, acts, _ = mod.forward(net.weights, net.biases, x, True)
    dy = np.ones_like(y)
    m, v = np.zeros_like(net.params), np.zeros_like(net.params)
    target = net.params.copy()
    g = rng.standard_normal(net.params.size) * 1e-3

    def fwd():
        mod.forward(net.weights, net.biases, x, True)

    def fwd_bwd():
        y, acts, _ = mod.forward(net.weights, net.biases, x, True)
        mod.backward(net.weights, acts, y, dy, True, None, gw, gb)

    def adam():
        mod.adam(net.params, g, m, v, 1e-9, 0.9, 0.999, 1e-8, 1)

    def polyak():
        mod.polyak(target, net.params, 0.05)

    out = {}
    for name, fn in (("forward", fwd), ("fwd+bwd", fwd_bwd), ("adam", adam), ("polyak", polyak)):
        t = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        out[name] = t * 1e6
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is timed")
    print(f"{'case':<18}{'kernel':<10}{'numpy us':>10}{'cython us':>11}{'speedup':>9}")
    for label, sizes, batch in CASES:
        py = _bench_case(_kernels_py, sizes, batch, args.number, args.repeat)
        cy = _bench_case(_kernels, sizes, batch, args.number, args.repeat) if _kernels else None
        for k, t_py in py.items():
            if cy:
                print(f"{label:<18}{k:<10}{t_py:>10.1f}{cy[k]:>11.1f}{t_py / cy[k]:>8.2f}x")
            else:
                print(f"{label:<18}{k:<10}{t_py:>10.1f}{'-':>11}{'-':>9}")


if __name__ == "__main__":
    main()
