"""End-to-end acceptance criteria, one test per criterion.

Each test enforces its runtime budget and records a PASS/FAIL line that is
printed in the pytest terminal summary.
"""
import json
import random
from itertools import product

from acceptance_log import criterion
from loopnest_sim import simulate

from fusemap.cli import main
from fusemap.costmodel import evaluate_gemm, evaluate_layer, evaluate_op, refetch_free_genome
from fusemap.fusion import FusionCode, all_codes, decode, encode, primitive_footprints
from fusemap.hardware import EDGE, MB, HardwareConfig
from fusemap.mapping import FIXED_TEMPLATES, parse_genome, random_genome
from fusemap.search import GaConfig, exhaustive_oracle, full_search, ga_search
from fusemap.workload import OP_IDS, ModelDims, arithmetic_intensity, build_layer, gemm_op

GPT2 = ModelDims(d=768, l=1024, n_h=12, d_ffn=3072)
LAYER_GA = GaConfig(population_size=40, generations=30, seed=0)


def table_reductions(d, l, f):
    return {1: 5 * d * l, 2: 2 * l * l, 3: 2 * l * l, 4: 2 * d * l, 5: 2 * d * l, 6: 2 * f * l}


@criterion(1, "fusion primitive footprint identities", 1.0)
def test_c01_table_identities():
    rng = random.Random(1)
    for _ in range(200):
        d, l, f = rng.randint(1, 8192), rng.randint(1, 8192), rng.randint(1, 32768)
        dims = ModelDims(d=d, l=l, d_ffn=f)
        for pid, reduced in table_reductions(d, l, f).items():
            fp = primitive_footprints(pid, dims)
            assert fp.memory_reduced == fp.memory_original - fp.memory_fused, (pid, d, l, f)
            assert fp.memory_fused == fp.input_fused + fp.output_fused, (pid, d, l, f)
            assert fp.memory_reduced == reduced, (pid, d, l, f)
    return "200 triples x 6 primitives exact"


@criterion(2, "fusion-code decode and round trip", 1.0)
def test_c02_decode():
    assert decode("110110").chain_names == ("Op12", "Op45")
    dec = decode("000000")
    assert dec.chains == () and dec.unfused == OP_IDS and len(dec.unfused) == 9
    for code in all_codes():
        assert encode(decode(code).chains) == code
        assert FusionCode(code.bits) == code
    return "64/64 codes round-trip"


@criterion(3, "cost model equals element-level simulator", 120.0)
def test_c03_oracle_equivalence():
    checked = 0
    for P in (1, 2, 4):
        hw = HardwareConfig(P=P, S1=1024, S2=1 << 20, bw_noc=1e9, bw_offchip=1e9)
        for dims in product(range(1, 5), repeat=3):
            rng = random.Random(hash((dims, P)) & 0xFFFFFF)
            for _ in range(50):
                g = random_genome(dims, hw, rng=rng)
                r = evaluate_gemm(*dims, g, hw)
                sim = simulate(g, dims, P)
                got = (r.acc_s1, r.acc_s2, r.acc_s3, r.compute_cycles)
                want = (sim["acc_s1"], sim["acc_s2"], sim["acc_s3"], sim["compute_cycles"])
                assert got == want, f"{dims} P={P}: {got} != {want}\n{g.to_text()}"
                checked += 1
    return f"{checked} genomes exact"


@criterion(4, "fusion removes exactly the primitive's traffic", 10.0)
def test_c04_fusion_traffic():
    dims = ModelDims(d=768, l=1024, n_h=1, d_ffn=3072)
    genomes = {op.id: refetch_free_genome(op.dims, EDGE) for op in build_layer(dims) if op.is_gemm}
    base = evaluate_layer("000000", genomes, dims, EDGE).total.acc_s3
    for pid, reduced in table_reductions(768, 1024, 3072).items():
        fused = evaluate_layer(FusionCode.from_primitives([pid]), genomes, dims, EDGE).total.acc_s3
        assert base - fused == reduced * dims.bytes_per_element, (pid, base - fused, reduced)
    # two-byte elements double every term
    wide = ModelDims(d=768, l=1024, n_h=1, d_ffn=3072, bytes_per_element=2)
    g2 = {op.id: refetch_free_genome(op.dims, EDGE, 2) for op in build_layer(wide) if op.is_gemm}
    b2 = evaluate_layer("000000", g2, wide, EDGE).total.acc_s3
    f2 = evaluate_layer("100000", g2, wide, EDGE).total.acc_s3
    assert b2 - f2 == 5 * 768 * 1024 * 2
    return "6/6 primitives exact"


@criterion(5, "PE utilization anchors", 1.0)
def test_c05_utilization():
    hw = HardwareConfig(P=6, S1=64, S2=4096, bw_noc=16e9, bw_offchip=16e9)
    g = parse_genome("SpatialMap(3,3) M; TemporalMap(3,3) N; TemporalMap(3,3) K\n"
                     "Cluster(3); SpatialMap(1,1) K; TemporalMap(1,1) M; TemporalMap(1,1) N")
    assert evaluate_gemm(3, 3, 3, g, hw).pe_utilization == 0.5
    opt = exhaustive_oracle((3, 3, 3), hw)
    assert opt.report.peak_pe_utilization == 1.0, opt.genome.to_text()
    return f"half-idle mapping 0.5, optimum peak {opt.report.peak_pe_utilization}"


@criterion(6, "roofline and work conservation", 30.0)
def test_c06_invariants():
    rng = random.Random(6)
    for _ in range(1000):
        dims = tuple(rng.randint(1, 512) for _ in range(3))
        P = rng.choice([1, 2, 3, 4, 6, 16, 64, 256, 1024])
        hw = HardwareConfig(P=P, S1=rng.choice([16, 64, 256, 1024]), S2=rng.choice([1 << 12, 1 << 16, 1 << 20]),
                            bw_noc=rng.uniform(1e9, 1e12), bw_offchip=rng.uniform(1e9, 1e11))
        op = gemm_op(*dims, batch=rng.choice([1, 1, 4]))
        g1 = random_genome(dims, hw, rng=rng)
        g2 = random_genome(dims, hw, rng=rng)
        r1, r2 = evaluate_op(g1, op, hw), evaluate_op(g2, op, hw)
        for r in (r1, r2):
            assert r.latency_cycles >= -(-r.mac_count // P)
            assert r.latency_cycles >= r.acc_s3 / hw.offchip_bytes_per_cycle - 1e-9
        assert r1.mac_count == r2.mac_count == op.mac_count
    return "1000 triples"


@criterion(7, "GA reaches exhaustive optimum", 120.0)
def test_c07_ga_quality():
    hw = HardwareConfig(P=4, S1=48, S2=4096, bw_noc=4e9, bw_offchip=2e9)
    opt = exhaustive_oracle((4, 4, 4), hw)
    hits = mono = 0
    for seed in range(20):
        r = ga_search((4, 4, 4), hw, cfg=GaConfig(population_size=32, generations=50, seed=seed))
        lat = [t.best_latency for t in r.trace]
        mono += all(a >= b for a, b in zip(lat, lat[1:]))
        hits += r.report.latency_cycles == opt.latency
    assert hits >= 18, f"{hits}/20 seeds hit the optimum"
    assert mono == 20, f"{mono}/20 traces non-increasing"
    return f"{hits}/20 optimal, {mono}/20 monotone (optimum {opt.latency} cycles)"


@criterion(8, "flexible + fusion beats fixed templates unfused", 600.0)
def test_c08_directional():
    flex = full_search(GPT2, EDGE, "Flexible", LAYER_GA)
    worst = []
    for tpl in FIXED_TEMPLATES:
        fixed = full_search(GPT2, EDGE, tpl, LAYER_GA, codes=["000000"])
        assert flex.report.latency_cycles < fixed.report.latency_cycles, (tpl.name, fixed.report)
        assert flex.report.energy_units <= fixed.report.energy_units, (tpl.name, fixed.report)
        worst.append(fixed.report.latency_cycles)
    return (f"flexible {flex.code}: {flex.report.latency_cycles} cycles vs fixed best "
            f"{min(worst)}")


@criterion(9, "S2 sweep trend", 1200.0)
def test_c09_s2_sweep():
    warm = None
    rows = []
    for mb in (12, 15, 17, 20):
        r = full_search(GPT2, EDGE.replace(S2=mb * MB), "Flexible", LAYER_GA, warm_start=warm)
        warm = r.stage_genomes
        rows.append((mb, r.report.latency_cycles, set(r.feasible_codes), set(FusionCode(r.code).enabled),
                     r.code))
    for (mb0, lat0, feas0, bits0, c0), (mb1, lat1, feas1, bits1, c1) in zip(rows, rows[1:]):
        assert lat1 <= lat0, f"latency rose {mb0}->{mb1} MB: {lat0} -> {lat1}"
        assert feas0 <= feas1, f"feasible set shrank {mb0}->{mb1} MB"
        assert bits0 <= bits1, f"selected code lost bits {mb0}->{mb1} MB: {c0} -> {c1}"
    return ", ".join(f"{mb}MB:{code}" for mb, _, _, _, code in rows)


@criterion(10, "arithmetic intensity peaks at l=512", 1.0)
def test_c10_intensity_shape():
    dims = ModelDims(d=768, l=512, n_h=12)
    I = {l: arithmetic_intensity(dims.with_seq_len(l)) for l in (128, 256, 512, 1024, 2048, 4096)}
    assert I[128] < I[256] < I[512]
    assert I[512] > I[1024] > I[2048] > I[4096]
    return " ".join(f"{l}:{v:.1f}" for l, v in I.items())


@criterion(11, "search output is deterministic", 600.0)
def test_c11_determinism(tmp_path):
    cfg = tmp_path / "gpt2.json"
    cfg.write_text(json.dumps({
        "model": {"d": 768, "l": 1024, "n_h": 12, "d_ffn": 3072},
        "hardware": {"preset": "edge"},
        "ga": {"population_size": 40, "generations": 30, "seed": 7},
    }))
    for run in ("a", "b"):
        assert main(["search", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / run)]) == 0
    a = (tmp_path / "a" / "pareto.csv").read_bytes()
    assert a == (tmp_path / "b" / "pareto.csv").read_bytes()
    return f"pareto.csv identical ({len(a)} bytes)"
