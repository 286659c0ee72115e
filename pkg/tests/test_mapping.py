import random

import pytest
from hypothesis import given, settings, strategies as st

from fusemap.hardware import EDGE, HardwareConfig
from fusemap.mapping import (FIXED_TEMPLATES, TEMPLATES, CapacityError, Genome, MappingError,
                             check, count_mapping_space, default_genome, format_genome_set,
                             iter_genome_groups, iter_genomes, parse_genome, parse_genome_set,
                             random_genome, repair, s1_footprint, s2_footprint, tile_choices,
                             validate)

HALF_IDLE = """SpatialMap(3,3) M; TemporalMap(3,3) N; TemporalMap(3,3) K
Cluster(3); SpatialMap(1,1) K; TemporalMap(1,1) M; TemporalMap(1,1) N"""
TINY = HardwareConfig(P=6, S1=64, S2=4096, bw_noc=16e9, bw_offchip=16e9)


def test_parse_round_trip():
    g = parse_genome(HALF_IDLE)
    assert g.cluster == 3
    assert g.inter.order == ("M", "N", "K") and g.inter.spatial_dim == "M"
    assert g.intra.spatial_dim == "K"
    assert g.inter.tiles() == {"M": 3, "N": 3, "K": 3}
    assert parse_genome(g.to_text()) == g


def test_parse_tolerates_whitespace():
    text = "  SpatialMap( 2 , 2 ) M ;TemporalMap(1,1) N; TemporalMap(1,1) K\n Cluster( 2 ) ;" \
           "TemporalMap(1,1) M; SpatialMap(1,1) N; TemporalMap(1,1) K"
    assert parse_genome(text).cluster == 2


@pytest.mark.parametrize("text", [
    "SpatialMap(1,1) M; TemporalMap(1,1) N; TemporalMap(1,1) K",
    HALF_IDLE.replace("SpatialMap(3,3) M", "SpatialMap(3,3) Q"),
    HALF_IDLE.replace("Cluster(3);", "Cluster(3); Cluster(2);"),
    HALF_IDLE + "; TemporalMap(1,1) K",
])
def test_parse_errors(text):
    with pytest.raises(MappingError):
        parse_genome(text)


def test_genome_set_sections():
    text = f"# per-operator\n[QProj]\n{HALF_IDLE}\n[FFN1]\n{HALF_IDLE}\n"
    gs = parse_genome_set(text)
    assert set(gs) == {"QProj", "FFN1"}
    assert parse_genome_set(format_genome_set(gs)) == gs
    assert isinstance(parse_genome_set(HALF_IDLE), Genome)
    with pytest.raises(MappingError):
        parse_genome_set(f"[A]\n{HALF_IDLE}\n[A]\n{HALF_IDLE}")


def test_validate_reports_every_violation():
    bad = parse_genome("SpatialMap(8,8) M; SpatialMap(3,3) N; TemporalMap(3,3) K\n"
                       "Cluster(9); SpatialMap(1,1) K; TemporalMap(1,1) M; TemporalMap(1,1) N")
    errors = validate(bad, (3, 3, 3), TINY)
    assert any("SpatialMap" in e for e in errors)
    assert any("exceeds dimension" in e for e in errors)
    with pytest.raises(MappingError) as exc:
        check(bad, (3, 3, 3), TINY)
    assert len(exc.value.violations) == len(errors)


def test_validate_cluster_and_capacity():
    g = parse_genome(HALF_IDLE)
    assert validate(g, (3, 3, 3), TINY) == []
    assert any("Cluster" in e for e in validate(g, (3, 3, 3), TINY.replace(P=2)))
    assert any("S1" in e for e in validate(g.with_tile("intra", "M", 3).with_tile("intra", "N", 3)
                                           .with_tile("intra", "K", 3), (3, 3, 3), TINY.replace(S1=8)))
    assert any("S2" in e for e in validate(g, (3, 3, 3), TINY.replace(S2=10)))


def test_overlapping_offsets_rejected():
    g = parse_genome(HALF_IDLE.replace("TemporalMap(3,3) N", "TemporalMap(3,2) N"))
    assert any("overlapping" in e for e in validate(g, (3, 3, 3), TINY))


def test_fixed_template_constraints():
    nvdla = TEMPLATES["NVDLA-like"]
    g = default_genome(nvdla, (64, 64, 64), EDGE)
    assert validate(g, (64, 64, 64), EDGE, nvdla) == []
    assert g.cluster == 16
    assert g.inter.style() == "STT-MNK" and g.intra.style() == "TTS-NMK"
    flex = parse_genome(HALF_IDLE)
    assert validate(flex, (3, 3, 3), TINY, nvdla)
    sdn = TEMPLATES["ShiDianNao-like"]
    assert any("spatial reduction" in e for e in validate(flex, (3, 3, 3), TINY, sdn))


def test_tile_choices_include_remainders():
    assert tile_choices(12) == (1, 2, 3, 4, 6, 8, 12)
    assert tile_choices(1) == (1,)


def test_space_count_matches_enumeration():
    hw = TINY.replace(P=4)
    for tpl in ("Flexible", "TPU-like"):
        n = sum(1 for _ in iter_genomes((2, 3, 2), hw, tpl))
        assert count_mapping_space((2, 3, 2), hw, tpl).count == n
        grouped = sum(sum(1 for _ in members()) for _, members in iter_genome_groups((2, 3, 2), hw, tpl))
        assert grouped == n


def test_space_is_large_for_real_layers():
    assert count_mapping_space((768, 1024, 768), EDGE).log10 > 6


def test_footprints():
    g = parse_genome(HALF_IDLE)
    assert s1_footprint(g) == 3
    assert s1_footprint(g, 2) == 6
    # two clusters on M, clipped to the dimension
    assert s2_footprint(g, (3, 3, 3), TINY) == 27


def test_repair_fits_capacity():
    hw = HardwareConfig(P=4, S1=6, S2=40, bw_noc=1e9, bw_offchip=1e9)
    g = parse_genome("SpatialMap(8,8) M; TemporalMap(8,8) N; TemporalMap(8,8) K\n"
                     "Cluster(9); SpatialMap(8,8) K; TemporalMap(8,8) M; TemporalMap(8,8) N")
    r = repair(g, (8, 8, 8), hw)
    assert validate(r, (8, 8, 8), hw) == []
    with pytest.raises(CapacityError):
        repair(g, (8, 8, 8), hw.replace(S1=2))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 40),
       st.sampled_from([1, 2, 4, 6, 16]), st.sampled_from(list(TEMPLATES)), st.integers(0, 10**6))
def test_random_genomes_are_valid(M, N, K, P, tpl, seed):
    hw = HardwareConfig(P=P, S1=64, S2=2048, bw_noc=1e9, bw_offchip=1e9)
    g = random_genome((M, N, K), hw, tpl, random.Random(seed))
    assert validate(g, (M, N, K), hw, tpl) == []
    assert parse_genome(g.to_text()) == g


def test_default_genomes_valid_for_all_fixed_templates():
    for tpl in FIXED_TEMPLATES:
        g = default_genome(tpl, (1024, 1024, 64), EDGE)
        assert validate(g, (1024, 1024, 64), EDGE, tpl) == []
