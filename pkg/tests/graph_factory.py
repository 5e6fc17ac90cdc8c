"""Random tapes sprinkled with injection and bypass sites, for fusion tests."""
import numpy as np

from fgi.autograd import Tape, detach
from fgi.snapshot import snapshot
from fgi.surrogate import DoubleGaussian, Gaussian, TanhDeriv, bypass, inject, step

SHAPES = (Gaussian(), Gaussian(0.2, 0.8), DoubleGaussian(), TanhDeriv())


def _filler(rng, pool):
    a = pool[rng.integers(len(pool))]
    b = pool[rng.integers(len(pool))]
    kind = rng.integers(5)
    if kind == 0:
        return a + b
    if kind == 1:
        return a * b
    if kind == 2:
        return (a * 0.5).tanh()
    if kind == 3:
        return a - 0.25 * b
    return (a.tanh()).exp()


def _site(rng, pool, reuse):
    v = pool[rng.integers(len(pool))]
    if rng.integers(2) == 0:
        shape = SHAPES[rng.integers(len(SHAPES))]
        if not reuse:
            return inject(v, step(v), shape(v)), None
        mul = v * detach(shape(v))
        y = mul - detach(mul) + detach(step(v))
        return y, mul * 2.0
    g = v.tanh()
    y = bypass(step(v), g)
    return y, (g * 1.5 if reuse else None)


def random_graph(seed: int, max_sites: int = 3):
    """Return (snapshot, fusable_sites) for a seeded random graph.

    Sites whose interior is consumed elsewhere are built on purpose so the
    fusion pass has something to refuse; they are not counted.
    """
    rng = np.random.default_rng(seed)
    tape = Tape()
    pool = [
        tape.leaf(rng.uniform(-2, 2, 4), requires_grad=True, name="x"),
        tape.leaf(rng.uniform(-1, 1, 4), requires_grad=True, name="w"),
        tape.leaf(rng.uniform(-1, 1, 4), name="c"),
    ]
    n_sites = int(rng.integers(0, max_sites + 1))
    plan = ["site"] * n_sites + ["filler"] * int(rng.integers(1, 6))
    rng.shuffle(plan)
    fusable = 0
    for item in plan:
        if item == "filler":
            pool.append(_filler(rng, pool))
            continue
        reuse = bool(rng.integers(4) == 0)
        y, extra = _site(rng, pool, reuse)
        pool.append(y)
        if extra is not None:
            pool.append(extra)
        fusable += not reuse
    out = pool[-1].sum()
    for v in pool[3:-1]:
        if rng.integers(2):
            out = out + v.sum()
    return snapshot(tape, [out]), fusable
