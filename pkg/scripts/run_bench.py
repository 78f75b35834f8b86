"""Timing sweep of the structured cost against the naive full-state filter."""

import argparse

from stgp.bench import run_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    sizes = [(500, 128), (500, 256), (500, 512), (1000, 256), (200, 128)]
    print(f"{'N':>5} {'M':>5} {'filter s':>9} {'total s':>9} {'naive s':>9} {'speedup':>8}")
    for row in run_bench(sizes, args.repeats, naive_max_state=400):
        print(f"{row['N']:>5} {row['M']:>5} {row['t_filter']:>9.4f} {row['t_structured']:>9.4f} "
              f"{row['t_naive']:>9.3f} {row['speedup']:>8.1f}")


if __name__ == "__main__":
    main()
