"""Spatially distributed FIR identification at reduced scale (M=50, N=400, n_b=125)."""

import argparse
import time

import numpy as np

from stgp.sysid import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--M", type=int, default=50)
    ap.add_argument("--N", type=int, default=400)
    ap.add_argument("--n-b", type=int, default=125)
    ap.add_argument("--snr", type=float, default=1.0)
    args = ap.parse_args()
    fits = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        r = run_experiment(seed, M=args.M, N=args.N, n_b=args.n_b, snr=args.snr)
        fits.append((r["spatial_temporal"].avg_fit, r["temporal"].avg_fit))
        print(f"seed {seed}: spatial-temporal {fits[-1][0]:.2f}  temporal {fits[-1][1]:.2f}  "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)
    st, tb = np.mean(fits, axis=0)
    print(f"mean: spatial-temporal {st:.2f}  temporal {tb:.2f}  gap {st - tb:.2f}")


if __name__ == "__main__":
    main()
