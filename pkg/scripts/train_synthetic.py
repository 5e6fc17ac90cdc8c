"""Train every mechanism on the synthetic task and compare loss trajectories."""
import argparse

import numpy as np

from fgi.data import SeqConfig, synthetic_dataset
from fgi.surrogate import Mechanism, TanhDeriv, parse_shape, supports
from fgi.trainer import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--shape", type=parse_shape, default=TanhDeriv())
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    test = synthetic_dataset(args.seed + 1, 256)
    ref = None
    for mech in Mechanism:
        if not supports(args.shape, mech):
            print(f"{mech.value:>7}: skipped ({args.shape.token} has no bypass form)")
            continue
        cfg = TrainConfig(iterations=args.iters, mechanism=mech, shape=args.shape, seed=args.seed,
                          seq=SeqConfig(28, args.batch), hidden=args.hidden)
        m = train(cfg)
        ref = m.loss if ref is None else ref
        drift = float(np.max(np.abs(np.array(m.loss) - ref) / np.abs(ref)))
        print(f"{mech.value:>7}: final loss {m.loss[-1]:.6f}  test acc {evaluate(m.weights, test, cfg):.3f}  "
              f"fwd {np.mean(m.fwd_ms):.2f} ms  bwd {np.mean(m.bwd_ms):.2f} ms  max rel loss drift {drift:.1e}")


if __name__ == "__main__":
    main()
