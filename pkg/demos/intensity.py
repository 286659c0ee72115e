"""Arithmetic intensity of a GPT-2 layer as the sequence grows.

Intensity climbs while the weight GEMMs amortize their weights over more
tokens, then falls once the l^2 attention tensors dominate traffic.
"""
from fusemap import ModelDims, intensity_table
from fusemap.workload import mops_share

dims = ModelDims(d=768, l=1024, n_h=12, d_ffn=3072)
lengths = [64, 128, 256, 512, 1024, 2048, 4096]

print(f"{'l':>6} {'FLOP/B':>8} {'attn share':>11}")
for row in intensity_table(dims, lengths):
    if row.op == "layer":
        share = mops_share(dims.with_seq_len(row.l))
        print(f"{row.l:>6} {row.intensity:>8.1f} {share:>10.1%}")

print("\nper operator at l=1024:")
for row in intensity_table(dims):
    print(f"  {row.op:<10} {row.intensity:>8.1f}")
