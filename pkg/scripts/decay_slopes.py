"""Fitted decay of max |E psi| over spheres for flat, cylinder and paraboloid patches."""
import argparse
import time

from multirestrict import io
from multirestrict.extension import bump_density, decay_profile
from multirestrict.geometry import Domain, SurfacePatch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radii", type=float, nargs="+", default=[8, 16, 32, 64, 128, 256])
    ap.add_argument("--h", type=float, default=1 / 128)
    ap.add_argument("--radius", type=float, default=1.0, help="domain and bump radius")
    ap.add_argument("--dirs", type=int, default=1000)
    ap.add_argument("--out", default="decay_slopes.json")
    a = ap.parse_args()
    res = {}
    for fam in ("flat", "cylinder", "paraboloid"):
        t = time.perf_counter()
        p = SurfacePatch(3, fam, {}, Domain((0.0, 0.0), radius=a.radius))
        prof = decay_profile(bump_density(p, a.h), a.radii, n_dirs=a.dirs, gauss_dirs=a.dirs)
        res[fam] = prof.to_dict()
        print(f"{fam:<11} slope {prof.slope:+.3f}  ({time.perf_counter() - t:.1f} s)")
    io.write_json(a.out, res)


if __name__ == "__main__":
    main()
