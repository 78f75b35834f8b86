"""Write a synthetic panel, fit it, and print the test-period fit."""

import sys
import tempfile
from pathlib import Path

from stgp.cli import main as stgp


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="stgp_"))
    stgp(["make-fixture", "--out", str(out / "fixture"), "--M", "6", "--N", "80", "--test", "12"])
    stgp(["fit", "--data", str(out / "fixture" / "data.csv"), "--locations", str(out / "fixture" / "locations.csv"),
          "--test", "12", "--temporal-kernel", "exp", "--grid", "3", "--starts", "2", "--out", str(out / "fit")])
    print((out / "fit" / "fit_report.csv").read_text().splitlines()[-1])
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
