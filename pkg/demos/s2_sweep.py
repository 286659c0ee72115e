"""S2 sweep through the command line; writes out/s2_sweep/sweep.csv."""
import csv
from pathlib import Path

from fusemap.cli import main

here = Path(__file__).parent
out = here / "out" / "s2_sweep"
main(["sweep", "--config", str(here / "configs" / "s2_sweep.json"), "--out", str(out)])

with open(out / "sweep.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        mb = int(row["hardware.s2_bytes"]) / 2**20
        print(f"S2 {mb:>4.0f} MB  code {row['best_code']}  {int(row['latency_cycles']):>12,} cycles  "
              f"{row['feasible_codes']} feasible codes")
