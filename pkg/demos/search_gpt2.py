"""Joint fusion + mapping search for one GPT-2 layer on the edge platform,
compared with each fixed-dataflow accelerator running unfused."""
from fusemap import EDGE, GaConfig, ModelDims, full_search
from fusemap.mapping import FIXED_TEMPLATES

dims = ModelDims(d=768, l=1024, n_h=12, d_ffn=3072)
cfg = GaConfig(population_size=40, generations=30, seed=0)

best = full_search(dims, EDGE, "Flexible", cfg)
print(f"flexible: code {best.code}, {best.report.latency_cycles:,} cycles, "
      f"energy {best.report.energy_units:.3e}")
print("pareto front:")
for p in best.pareto:
    print(f"  {p.code} {p.latency:>12,} {p.energy:.3e}")

for tpl in FIXED_TEMPLATES:
    r = full_search(dims, EDGE, tpl, cfg, codes=["000000"])
    gain = 1 - best.report.latency_cycles / r.report.latency_cycles
    saving = 1 - best.report.energy_units / r.report.energy_units
    print(f"{tpl.name:<16} {r.report.latency_cycles:>12,} cycles  "
          f"flexible is {gain:.1%} faster, {saving:.1%} less energy")
