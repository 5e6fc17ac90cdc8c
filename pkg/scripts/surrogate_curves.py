"""Tabulate surrogate shapes and the gradients each mechanism delivers.

Output columns: x, then for every shape its value and the gradient obtained
through inject; whitespace separated, one row per grid point.
"""
import argparse

import numpy as np

from fgi.autograd import Tape, backward
from fgi.surrogate import DoubleGaussian, Gaussian, Mechanism, TanhDeriv, spike


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="surrogate_curves.dat")
    ap.add_argument("--step", type=float, default=0.05)
    args = ap.parse_args()

    x = np.arange(-5.0, 5.0 + args.step / 2, args.step)
    shapes = {"gaussian": Gaussian(), "dblgaussian": DoubleGaussian(), "tanh": TanhDeriv()}
    cols, names = [x], ["x"]
    for name, shape in shapes.items():
        tape = Tape()
        v = tape.leaf(x, requires_grad=True, name="x")
        grad = backward(spike(v, shape, Mechanism.INJECT).sum())["x"]
        cols += [shape(x), grad]
        names += [name, f"d_{name}"]
    np.savetxt(args.out, np.column_stack(cols), fmt="%.10f", header=" ".join(names))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
