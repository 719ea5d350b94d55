"""l^2 sum over R^{1/2+delta0} balls of products of packet-selected norms."""
import argparse

import numpy as np

from multirestrict import io
from multirestrict.experiments import ball_sum_check
from multirestrict.extension import random_density
from multirestrict.geometry import Domain, SurfacePatch
from multirestrict.wavepackets import decompose


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--R", type=float, default=64)
    ap.add_argument("--h", type=float, default=1 / 32)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--delta0", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="ball_sums.json")
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)
    patches = [SurfacePatch(3, "paraboloid", {}, Domain((c, 0.0), radius=0.25)) for c in (-0.5, 0.5)]
    decs = [decompose(random_density(p, a.h, rng, "phases"), a.R, a.delta) for p in patches]
    res = ball_sum_check(decs, a.R, a.delta0)
    print(f"{res.n_balls} balls, ratio {res.ratio:.3f}, passed {res.passed}")
    io.write_json(a.out, res.to_json())


if __name__ == "__main__":
    main()
