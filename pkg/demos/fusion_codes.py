"""Which fusion codes fit a 12 MB or 20 MB scratchpad, and what they save."""
from fusemap import EDGE, ModelDims, decode, enumerate_codes, primitive_footprints
from fusemap.hardware import MB

dims = ModelDims(d=768, l=1024, n_h=12, d_ffn=3072)

print(f"{'primitive':>9} {'fused':>10} {'original':>10} {'reduced':>10}  (bytes)")
for pid in range(1, 7):
    fp = primitive_footprints(pid, dims)
    print(f"{pid:>9} {fp.memory_fused:>10} {fp.memory_original:>10} {fp.memory_reduced:>10}")

print("\n110110 decodes to", decode("110110").chain_names)

for mb in (12, 20):
    rows = enumerate_codes(dims, EDGE.replace(S2=mb * MB))
    ok = [r for r in rows if r.feasible]
    best = max(ok, key=lambda r: r.memory_reduced)
    print(f"\nS2 = {mb} MB: {len(ok)}/64 codes fit; largest saving {best.code} "
          f"({'+'.join(best.chains)}) removes {best.memory_reduced / MB:.1f} MB")
