"""Two exactly crossing rays in an empty 7 x 7 x 3 m box, localizer only."""

import argparse

import numpy as np

from reflectloc.cli import parse_overrides
from reflectloc.experiments import two_ray_trials


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--tol", type=float, default=0.1, help="success radius in meters")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="LocalizerConfig override, e.g. sigma_w_scale=0.4")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()

    _, loc = parse_overrides(["localizer." + item for item in args.set])
    s = two_ray_trials(range(args.trials), loc, args.workers)
    if args.verbose:
        for t in s.trials:
            print(f"seed {t.seed:3d}: error {t.error_m:.3f} m, converged {t.converged}, {t.iterations} it")
    good = sum(t.converged and t.error_m < args.tol for t in s.trials)
    print(f"{good}/{len(s.trials)} converged within {args.tol} m; "
          f"{sum(t.converged for t in s.trials)} converged; "
          f"median error {np.median(s.errors):.3f} m")


if __name__ == "__main__":
    main()
