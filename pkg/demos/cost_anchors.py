"""Two small mappings of a 3x3x3 GEMM on six PEs.

The first splits M over two clusters and K inside each cluster, so only
three of the six PEs work and utilization is one half.  The exhaustive
oracle then finds a mapping whose first step keeps every PE busy.
"""
from pathlib import Path

from fusemap import HardwareConfig, evaluate_gemm, parse_genome
from fusemap.search import exhaustive_oracle

hw = HardwareConfig(P=6, S1=64, S2=4096, bw_noc=16e9, bw_offchip=16e9)
genome = parse_genome((Path(__file__).parent / "configs" / "half_idle.genome").read_text())

r = evaluate_gemm(3, 3, 3, genome, hw)
print(genome.to_text())
print(f"compute {r.compute_cycles} cycles, utilization {r.pe_utilization:.2f}, "
      f"S3 {r.acc_s3} B, S2 {r.acc_s2} B, S1 {r.acc_s1} B\n")

opt = exhaustive_oracle((3, 3, 3), hw)
print(opt.genome.to_text())
print(f"optimum: {opt.latency} cycles, average utilization {opt.report.pe_utilization:.2f}, "
      f"first-step utilization {opt.report.peak_pe_utilization:.2f} "
      f"({opt.evaluated} genomes evaluated)")
