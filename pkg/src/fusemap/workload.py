"""Transformer layer operator graph and FLOP/byte accounting.

Every GEMM is written as ``C[M, N] += A[M, K] * B[K, N]`` with an optional
outer batch (head) loop.  Tensors keep their head count as an explicit batch
so footprints stay exact per tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

# nonlinear-op cost per element, configurable through ModelDims
SOFTMAX_FLOPS_PER_ELEMENT = 5
GELU_FLOPS_PER_ELEMENT = 8

OP_IDS = ("QProj", "KProj", "VProj", "AttnScore", "Softmax", "AttnOut",
          "OutProj", "FFN1", "FFN2")

# short labels used for the Q, K, V, A, S, O, Y, L1, L2 steps
STEP_LABELS = dict(zip(OP_IDS, ("Q", "K", "V", "A", "S", "O", "Y", "L1", "L2")))


class DimensionError(ValueError):
    """Model dimensions violate an invariant."""


class UndefinedIntensityError(ZeroDivisionError):
    """Arithmetic intensity requested over zero memory traffic."""


@dataclass(frozen=True)
class ModelDims:
    d: int
    l: int
    n_h: int = 1
    d_ffn: int | None = None
    bytes_per_element: int = 1
    mode: str = "prefill"
    kv_len: int | None = None
    softmax_flops: int = SOFTMAX_FLOPS_PER_ELEMENT
    gelu_flops: int = GELU_FLOPS_PER_ELEMENT

    def __post_init__(self):
        if self.d_ffn is None:
            object.__setattr__(self, "d_ffn", 4 * self.d)
        for name in ("d", "l", "n_h", "d_ffn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")
        if self.d % self.n_h:
            raise DimensionError(f"d mod n_h must be 0 (d={self.d}, n_h={self.n_h})")
        if self.bytes_per_element < 1:
            raise DimensionError("bytes_per_element must be >= 1")
        if self.mode not in ("prefill", "decode"):
            raise DimensionError(f"mode must be 'prefill' or 'decode', got {self.mode!r}")
        if self.mode == "decode":
            if self.kv_len is None or self.kv_len < 1:
                raise DimensionError("decode mode requires kv_len >= 1")
        if self.softmax_flops < 0 or self.gelu_flops < 0:
            raise DimensionError("nonlinear FLOP coefficients must be non-negative")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_h

    @property
    def l_q(self) -> int:
        return 1 if self.mode == "decode" else self.l

    @property
    def l_kv(self) -> int:
        return self.kv_len if self.mode == "decode" else self.l

    def with_seq_len(self, l: int) -> "ModelDims":
        return replace(self, l=l)


@dataclass(frozen=True)
class TensorRole:
    name: str
    rows: int
    cols: int
    batch: int = 1

    @property
    def elements(self) -> int:
        return self.rows * self.cols * self.batch

    def footprint(self, bytes_per_element: int = 1) -> int:
        return self.elements * bytes_per_element


@dataclass(frozen=True)
class BaseOp:
    """One of the nine per-layer operators.

    For GEMMs ``inputs`` is ``(A, B)`` and ``output`` is ``C``; for the
    softmax ``inputs`` is the single score tensor.
    """

    id: str
    kind: str                    # "GEMM" | "BatchedGEMM" | "Elementwise"
    M: int
    N: int
    K: int
    batch: int
    inputs: tuple[TensorRole, ...]
    output: TensorRole
    bytes_per_element: int = 1
    # FLOPs per output element added by a fused activation (GELU on FFN1)
    epilogue_flops: int = 0
    # FLOPs per element for elementwise ops
    elementwise_flops: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.M, self.N, self.K)

    @property
    def is_gemm(self) -> bool:
        return self.kind != "Elementwise"

    @property
    def tensors(self) -> tuple[TensorRole, ...]:
        return self.inputs + (self.output,)

    @property
    def mac_count(self) -> int:
        return self.M * self.N * self.K * self.batch if self.is_gemm else 0

    @property
    def elements(self) -> int:
        """Output elements (over all batches)."""
        return self.output.elements

    @property
    def flops(self) -> int:
        return op_flops_mops(self)[0]

    @property
    def mops(self) -> int:
        return op_flops_mops(self)[1]


def _gemm(op_id, m, n, k, batch, a, b, c, bpe, epilogue=0) -> BaseOp:
    kind = "BatchedGEMM" if batch > 1 else "GEMM"
    return BaseOp(op_id, kind, m, n, k, batch, (a, b), c, bpe, epilogue_flops=epilogue)


def layer_tensors(dims: ModelDims) -> dict[str, TensorRole]:
    """All tensor roles of one layer, keyed by name."""
    d, dh, h, f = dims.d, dims.head_dim, dims.n_h, dims.d_ffn
    lq, lkv = dims.l_q, dims.l_kv
    # K and V cover the whole context in decode; fresh projections cover l_q
    return {
        "X": TensorRole("X", d, lq),
        "W_Q": TensorRole("W_Q", d, d),
        "W_K": TensorRole("W_K", d, d),
        "W_V": TensorRole("W_V", d, d),
        "W_O": TensorRole("W_O", d, d),
        "Q": TensorRole("Q", dh, lq, h),
        "K": TensorRole("K", dh, lkv, h),
        "V": TensorRole("V", dh, lkv, h),
        "A": TensorRole("A", lq, lkv, h),
        "S": TensorRole("S", lq, lkv, h),
        "O": TensorRole("O", dh, lq, h),
        "Y": TensorRole("Y", d, lq),
        "a1": TensorRole("a1", f, d),
        "L1": TensorRole("L1", f, lq),
        "a2": TensorRole("a2", d, f),
        "L2": TensorRole("L2", d, lq),
    }


def build_layer(dims: ModelDims) -> list[BaseOp]:
    """The nine operators of one layer in dependency order."""
    t = layer_tensors(dims)
    d, dh, h, f = dims.d, dims.head_dim, dims.n_h, dims.d_ffn
    lq, lkv = dims.l_q, dims.l_kv
    bpe = dims.bytes_per_element
    # the K/V projections only produce the l_q fresh columns; attention reads
    # the whole (cached) context
    k_new = TensorRole("K", dh, lq, h)
    v_new = TensorRole("V", dh, lq, h)
    return [
        _gemm("QProj", d, lq, d, 1, t["W_Q"], t["X"], t["Q"], bpe),
        _gemm("KProj", d, lq, d, 1, t["W_K"], t["X"], k_new, bpe),
        _gemm("VProj", d, lq, d, 1, t["W_V"], t["X"], v_new, bpe),
        _gemm("AttnScore", lq, lkv, dh, h, t["Q"], t["K"], t["A"], bpe),
        BaseOp("Softmax", "Elementwise", lq, lkv, 1, h, (t["A"],), t["S"], bpe,
               elementwise_flops=dims.softmax_flops),
        _gemm("AttnOut", dh, lq, lkv, h, t["V"], t["S"], t["O"], bpe),
        _gemm("OutProj", d, lq, d, 1, t["W_O"], t["O"], t["Y"], bpe),
        _gemm("FFN1", f, lq, d, 1, t["a1"], t["Y"], t["L1"], bpe, epilogue=dims.gelu_flops),
        _gemm("FFN2", d, lq, f, 1, t["a2"], t["L1"], t["L2"], bpe),
    ]


def gemm_op(M: int, N: int, K: int, batch: int = 1, bytes_per_element: int = 1,
            op_id: str = "GEMM") -> BaseOp:
    """A standalone GEMM, handy for single-operator studies."""
    a = TensorRole("A", M, K, batch)
    b = TensorRole("B", K, N, batch)
    c = TensorRole("C", M, N, batch)
    return _gemm(op_id, M, N, K, batch, a, b, c, bytes_per_element)


def softmax_op(rows: int, cols: int, batch: int = 1, bytes_per_element: int = 1,
               flops_per_element: int = SOFTMAX_FLOPS_PER_ELEMENT) -> BaseOp:
    a = TensorRole("A", rows, cols, batch)
    s = TensorRole("S", rows, cols, batch)
    return BaseOp("Softmax", "Elementwise", rows, cols, 1, batch, (a,), s,
                  bytes_per_element, elementwise_flops=flops_per_element)


def op_flops_mops(op: BaseOp) -> tuple[int, int]:
    """Compulsory (no-reuse) FLOPs and memory bytes of one operator."""
    bpe = op.bytes_per_element
    if op.is_gemm:
        flops = 2 * op.M * op.N * op.K * op.batch + op.epilogue_flops * op.elements
        distinct = {t.name: t for t in op.tensors}
        mops = bpe * sum(t.elements for t in distinct.values())
        return flops, mops
    n = op.elements
    return op.elementwise_flops * n, 2 * n * bpe


def layer_flops_mops(dims: ModelDims) -> tuple[int, int]:
    ops = build_layer(dims)
    return sum(op.flops for op in ops), sum(op.mops for op in ops)


def arithmetic_intensity(scope: BaseOp | Sequence[BaseOp] | ModelDims) -> float:
    """FLOPs per byte over an operator, a list of operators, or a whole layer."""
    if isinstance(scope, ModelDims):
        ops: Sequence[BaseOp] = build_layer(scope)
    elif isinstance(scope, BaseOp):
        ops = [scope]
    else:
        ops = scope
    flops = sum(op.flops for op in ops)
    mops = sum(op.mops for op in ops)
    if mops == 0:
        raise UndefinedIntensityError("arithmetic intensity undefined for zero memory traffic")
    return flops / mops


def mops_share(dims: ModelDims, op_ids: Sequence[str] = ("AttnScore", "Softmax")) -> float:
    """Fraction of layer memory traffic attributable to ``op_ids``."""
    ops = build_layer(dims)
    total = sum(op.mops for op in ops)
    return sum(op.mops for op in ops if op.id in op_ids) / total


@dataclass
class IntensityRow:
    l: int
    op: str
    flops: int
    mops: int
    intensity: float = field(default=0.0)


def intensity_table(dims: ModelDims, seq_lens: Sequence[int] | None = None) -> list[IntensityRow]:
    """Per-operator and per-layer rows (op == "layer") for each sequence length."""
    rows = []
    for l in seq_lens or [dims.l]:
        ops = build_layer(dims.with_seq_len(l))
        for op in ops:
            rows.append(IntensityRow(l, op.id, op.flops, op.mops, op.flops / op.mops))
        fl = sum(op.flops for op in ops)
        mo = sum(op.mops for op in ops)
        rows.append(IntensityRow(l, "layer", fl, mo, fl / mo))
    return rows
