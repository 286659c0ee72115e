"""Fusion primitives, 6-bit fusion codes and their decoded chains.

A fusion code enables any subset of the six adjacent-operator merges below.
Enabled primitives that share an operator collapse into one chain, so
``110110`` yields two chains, ``Op12`` and ``Op45``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable

from .workload import OP_IDS, BaseOp, ModelDims, TensorRole, build_layer

N_PRIMITIVES = 6

PRIMITIVE_OPS: dict[int, tuple[str, ...]] = {
    1: ("QProj", "KProj", "AttnScore"),
    2: ("AttnScore", "Softmax"),
    3: ("Softmax", "AttnOut"),
    4: ("VProj", "AttnOut"),
    5: ("AttnOut", "OutProj"),
    6: ("FFN1", "FFN2"),
}


@dataclass(frozen=True)
class FusionCode:
    bits: str

    def __post_init__(self):
        if len(self.bits) != N_PRIMITIVES or set(self.bits) - {"0", "1"}:
            raise ValueError(f"fusion code must be {N_PRIMITIVES} binary digits, got {self.bits!r}")

    @classmethod
    def parse(cls, code: "str | FusionCode") -> "FusionCode":
        return code if isinstance(code, FusionCode) else cls(str(code))

    @classmethod
    def from_primitives(cls, ids: Iterable[int]) -> "FusionCode":
        ids = set(ids)
        return cls("".join("1" if i in ids else "0" for i in range(1, N_PRIMITIVES + 1)))

    @property
    def enabled(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, b in enumerate(self.bits) if b == "1")

    def __str__(self) -> str:
        return self.bits

    def __le__(self, other: "FusionCode") -> bool:
        """Bitwise subset."""
        return set(self.enabled) <= set(other.enabled)


def all_codes() -> list[FusionCode]:
    """All 64 codes in ascending binary order."""
    return [FusionCode("".join(bits)) for bits in product("01", repeat=N_PRIMITIVES)]


@dataclass(frozen=True)
class Footprints:
    """Table-style footprints of one primitive, in bytes."""

    id: int
    memory_fused: int
    input_fused: int
    output_fused: int
    memory_original: int
    input_original: int
    output_original: int

    @property
    def memory_reduced(self) -> int:
        return self.memory_original - self.memory_fused


def _consumers(ops: list[BaseOp]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for op in ops:
        for t in op.inputs:
            out.setdefault(t.name, set()).add(op.id)
    return out


def _boundary(ops_in: list[BaseOp], layer: list[BaseOp]):
    """External inputs, outputs and internal tensors of a set of operators."""
    ids = {op.id for op in ops_in}
    consumers = _consumers(layer)
    produced = {op.output.name: op.output for op in ops_in}
    internal = {name: t for name, t in produced.items()
                if consumers.get(name) and consumers[name] <= ids}
    inputs: dict[str, TensorRole] = {}
    for op in ops_in:
        for t in op.inputs:
            if t.name not in produced:
                inputs.setdefault(t.name, t)
    outputs = {name: t for name, t in produced.items() if name not in internal}
    return inputs, outputs, internal


def primitive_footprints(pid: int, dims: ModelDims) -> Footprints:
    if pid not in PRIMITIVE_OPS:
        raise ValueError(f"unknown fusion primitive {pid!r}; expected 1..{N_PRIMITIVES}")
    layer = build_layer(dims)
    ops = [op for op in layer if op.id in PRIMITIVE_OPS[pid]]
    bpe = dims.bytes_per_element
    inputs, outputs, _ = _boundary(ops, layer)
    in_fused = sum(t.elements for t in inputs.values())
    out_fused = sum(t.elements for t in outputs.values())
    # unfused: every operator reads its own inputs and writes its own output
    in_orig = sum(t.elements for op in ops for t in op.inputs)
    out_orig = sum(op.output.elements for op in ops)
    return Footprints(pid, bpe * (in_fused + out_fused), bpe * in_fused, bpe * out_fused,
                      bpe * (in_orig + out_orig), bpe * in_orig, bpe * out_orig)


def _panel(t: TensorRole) -> int:
    return min(t.rows, t.cols)


@dataclass(frozen=True)
class FusedChain:
    primitives: tuple[int, ...]
    base_ops: tuple[str, ...]
    external_inputs: tuple[TensorRole, ...]
    external_outputs: tuple[TensorRole, ...]
    internal_tensors: tuple[TensorRole, ...]
    s2_working_set: int

    @property
    def name(self) -> str:
        return "Op" + "".join(str(p) for p in self.primitives)

    @property
    def internal_names(self) -> frozenset[str]:
        return frozenset(t.name for t in self.internal_tensors)


def _make_chain(prims: tuple[int, ...], layer: list[BaseOp], bpe: int) -> FusedChain:
    ids = set().union(*(PRIMITIVE_OPS[p] for p in prims))
    ops = [op for op in layer if op.id in ids]
    inputs, outputs, internal = _boundary(ops, layer)
    # internal tensors live in S2 at full size; each external operand and the
    # output stream through a single panel
    elements = (sum(t.elements for t in internal.values())
                + sum(_panel(t) for t in inputs.values())
                + sum(_panel(t) for t in outputs.values()))
    return FusedChain(prims, tuple(op.id for op in ops), tuple(inputs.values()),
                      tuple(outputs.values()), tuple(internal.values()), elements * bpe)


@dataclass(frozen=True)
class DecodedCode:
    code: FusionCode
    chains: tuple[FusedChain, ...]
    unfused: tuple[str, ...]

    @property
    def chain_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.chains)

    def chain_of(self, op_id: str) -> FusedChain | None:
        for c in self.chains:
            if op_id in c.base_ops:
                return c
        return None


def decode(code: "str | FusionCode", dims: ModelDims | None = None) -> DecodedCode:
    """Merge enabled primitives that share an operator into chains."""
    code = FusionCode.parse(code)
    dims = dims or ModelDims(d=1, l=1)
    layer = build_layer(dims)
    groups: list[set[int]] = []
    for p in code.enabled:
        ops = set(PRIMITIVE_OPS[p])
        touching = [g for g in groups if any(ops & set(PRIMITIVE_OPS[q]) for q in g)]
        merged = {p}.union(*touching)
        groups = [g for g in groups if g not in touching] + [merged]
    groups.sort(key=min)
    chains = tuple(_make_chain(tuple(sorted(g)), layer, dims.bytes_per_element) for g in groups)
    covered = set().union(*(c.base_ops for c in chains)) if chains else set()
    unfused = tuple(op for op in OP_IDS if op not in covered)
    return DecodedCode(code, chains, unfused)


def encode(chains: Iterable[FusedChain]) -> FusionCode:
    return FusionCode.from_primitives(p for c in chains for p in c.primitives)


def chain_memory_reduced(code: "str | FusionCode", dims: ModelDims) -> int:
    """Table-style reduction of a code: sum over its enabled primitives (bytes)."""
    code = FusionCode.parse(code)
    return sum(primitive_footprints(p, dims).memory_reduced for p in code.enabled)


def _s2_capacity(hw) -> int:
    return hw if isinstance(hw, int) else hw.S2


def feasible(code: "str | FusionCode", dims: ModelDims, hw) -> tuple[bool, FusedChain | None]:
    """Whether every chain's working set fits S2; else the first chain that does not."""
    cap = _s2_capacity(hw)
    for chain in decode(code, dims).chains:
        if chain.s2_working_set > cap:
            return False, chain
    return True, None


@dataclass(frozen=True)
class CodeRow:
    code: FusionCode
    chains: tuple[str, ...]
    memory_reduced: int
    s2_required: int
    feasible: bool


def enumerate_codes(dims: ModelDims, hw) -> list[CodeRow]:
    cap = _s2_capacity(hw)
    rows = []
    for code in all_codes():
        dec = decode(code, dims)
        need = max((c.s2_working_set for c in dec.chains), default=0)
        rows.append(CodeRow(code, dec.chain_names, chain_memory_reduced(code, dims),
                            need, need <= cap))
    return rows
