import pytest
from hypothesis import given, settings, strategies as st

from fusemap.workload import (OP_IDS, DimensionError, ModelDims, UndefinedIntensityError,
                              arithmetic_intensity, build_layer, gemm_op, intensity_table,
                              layer_flops_mops, mops_share, softmax_op)

GPT2 = ModelDims(d=768, l=1024, n_h=12, d_ffn=3072)


def test_layer_has_nine_ops_in_order():
    ops = build_layer(GPT2)
    assert [op.id for op in ops] == list(OP_IDS)
    assert [op.is_gemm for op in ops].count(False) == 1


def test_gemm_shapes_follow_convention():
    ops = {op.id: op for op in build_layer(GPT2)}
    for op in ops.values():
        if not op.is_gemm:
            continue
        a, b = op.inputs
        # projection outputs are stored per head; only the element count matters
        assert a.elements == op.M * op.K * op.batch
        assert b.elements == op.K * op.N * op.batch
        assert op.output.elements == op.M * op.N * op.batch
    score = ops["AttnScore"]
    assert score.dims == (1024, 1024, 64) and score.batch == 12
    assert ops["FFN1"].dims == (3072, 1024, 768)


def test_producer_consumer_names_line_up():
    ops = {op.id: op for op in build_layer(GPT2)}
    assert ops["Softmax"].inputs[0].name == ops["AttnScore"].output.name
    assert ops["AttnOut"].inputs[1].name == ops["Softmax"].output.name
    assert ops["FFN2"].inputs[1].name == ops["FFN1"].output.name


def test_gemm_flops_and_compulsory_bytes():
    op = gemm_op(4, 5, 6, bytes_per_element=2)
    assert op.flops == 2 * 4 * 5 * 6
    assert op.mops == 2 * (4 * 6 + 6 * 5 + 4 * 5)
    assert op.mac_count == 120


def test_softmax_counts():
    op = softmax_op(8, 8, batch=2, flops_per_element=5)
    assert op.flops == 5 * 128
    assert op.mops == 2 * 128
    assert op.mac_count == 0


def test_layer_totals_sum_ops():
    flops, mops = layer_flops_mops(GPT2)
    ops = build_layer(GPT2)
    assert flops == sum(o.flops for o in ops)
    assert arithmetic_intensity(GPT2) == pytest.approx(flops / mops)


def test_attention_traffic_share_grows_with_length():
    short = mops_share(GPT2.with_seq_len(128))
    long = mops_share(GPT2.with_seq_len(4096))
    assert 0 < short < long < 1


def test_intensity_table_has_layer_row_per_length():
    rows = intensity_table(GPT2, [128, 512])
    assert [r.op for r in rows].count("layer") == 2
    assert all(r.intensity == pytest.approx(r.flops / r.mops) for r in rows)


def test_intensity_peaks_at_512():
    vals = {l: arithmetic_intensity(GPT2.with_seq_len(l)) for l in (128, 256, 512, 1024, 2048, 4096)}
    assert vals[128] < vals[256] < vals[512]
    assert vals[512] > vals[1024] > vals[2048] > vals[4096]


def test_zero_traffic_raises():
    with pytest.raises(UndefinedIntensityError):
        arithmetic_intensity([])


@pytest.mark.parametrize("kwargs", [
    dict(d=0, l=8), dict(d=10, l=8, n_h=3), dict(d=8, l=-1),
    dict(d=8, l=8, mode="decode"), dict(d=8, l=8, mode="train"),
])
def test_bad_dimensions_rejected(kwargs):
    with pytest.raises(DimensionError):
        ModelDims(**kwargs)


def test_decode_mode_shapes():
    dims = ModelDims(d=64, l=16, n_h=4, mode="decode", kv_len=32)
    ops = {op.id: op for op in build_layer(dims)}
    assert ops["AttnScore"].dims == (1, 32, 16)
    assert ops["QProj"].N == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 64), st.integers(1, 64), st.integers(1, 4))
def test_flops_scale_with_bytes(n_h, dh, l, bpe):
    one = ModelDims(d=n_h * dh, l=l, n_h=n_h)
    wide = ModelDims(d=n_h * dh, l=l, n_h=n_h, bytes_per_element=bpe)
    f1, m1 = layer_flops_mops(one)
    f2, m2 = layer_flops_mops(wide)
    assert f1 == f2 and m2 == bpe * m1
