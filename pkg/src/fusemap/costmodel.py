"""Analytical latency, energy and traffic of a mapped operator, chain or layer.

Loop semantics.  Inter-cluster loops (outer, in inter directive order) walk
array-level tiles; the inter SpatialMap dim hands consecutive tiles to the
``P // C`` clusters.  Intra loops walk sub-tiles inside each cluster tile;
the intra SpatialMap dim hands consecutive sub-tiles to the ``C`` PEs.  A
step is idle when no PE has work; remainder tiles simply leave PEs idle.

Traffic follows content: a buffer refetches a tensor tile whenever the tile
differs from the one it held at its previous non-idle step.  That is the
usual innermost-stationarity rule, with trip-count-1 loops and remainder
tiles handled exactly.

* S3 (off-chip <-> S2): array-level inter tiles, inter loops only.
* S2 (S2 <-> PEs over the NoC): the union over PEs of their tiles at every
  step, so multicast data is counted once.
* S1 (per PE): each PE's own fills plus three operand accesses per MAC.

The output tensor is written back on every eviction and read again on every
revisit, giving ``2 * fills - |C|``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

from .fusion import DecodedCode, FusedChain, FusionCode, decode, feasible
from .hardware import CLOUD, EDGE, MOBILE, PLATFORMS, HardwareConfig
from .mapping import (DIMS, TENSOR_DIMS, Directive, Genome, Level, MappingError, check,
                      n_clusters)
from .workload import BaseOp, ModelDims, build_layer, gemm_op

__all__ = [
    "HardwareConfig", "EDGE", "MOBILE", "CLOUD", "PLATFORMS", "CostReport",
    "DegenerateMappingError", "FeasibilityError", "evaluate_op", "evaluate_gemm",
    "evaluate_chain", "evaluate_layer", "refetch_free_genome", "LayerReport",
]


class DegenerateMappingError(ValueError):
    """The mapping leaves every PE idle."""


class FeasibilityError(ValueError):
    """A fused chain does not fit in S2."""


@dataclass
class CostReport:
    latency_cycles: int = 0
    compute_cycles: int = 0
    mem_bound_cycles: int = 0
    energy_units: float = 0.0
    acc_s1: int = 0
    acc_s2: int = 0
    acc_s3: int = 0
    pe_utilization: float = 0.0
    mac_count: int = 0
    # share of PEs busy on the first (full-tile) step
    peak_pe_utilization: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def combine(reports: Iterable["CostReport"], P: int) -> "CostReport":
        """Sequential composition: cycles, traffic and energy add up."""
        out = CostReport()
        for r in reports:
            out.latency_cycles += r.latency_cycles
            out.compute_cycles += r.compute_cycles
            out.mem_bound_cycles += r.mem_bound_cycles
            out.energy_units += r.energy_units
            out.acc_s1 += r.acc_s1
            out.acc_s2 += r.acc_s2
            out.acc_s3 += r.acc_s3
            out.mac_count += r.mac_count
            out.peak_pe_utilization = max(out.peak_pe_utilization, r.peak_pe_utilization)
        if out.compute_cycles:
            out.pe_utilization = out.mac_count / (out.compute_cycles * P)
        return out


# ------------------------------------------------------------- per-dim geometry
#
# A per-dim profile lists, for every distinct kind of inter step ``a``, a tuple
# (mult, E, nb, first): how many ``a`` share it, the extent covered over the
# whole inter step, the intra trip count and the extent of the first intra step.


def _pieces(e: int, t_i: int, m: int, p: int) -> tuple[int, int, int]:
    """(intra trips, total extent, first extent) of PE ``p`` over a tile of extent ``e``."""
    npc = -(-e // t_i)
    if p >= npc:
        return 0, 0, 0
    nb = -(-(npc - p) // m)
    last = e - (npc - 1) * t_i
    total = nb * t_i - ((t_i - last) if (npc - 1 - p) % m == 0 else 0)
    first = t_i if p < npc - 1 else last
    return nb, total, first


def _compress(rows) -> tuple:
    acc: Counter = Counter()
    for mult, E, nb, first in rows:
        if mult and nb:
            acc[(E, nb, first)] += mult
    return tuple((mult, *key) for key, mult in sorted(acc.items()))


def _inter_geometry(D: int, t_o: int, n: int):
    """Trip count, and each cluster's extent on the last inter step."""
    n_tiles = -(-D // t_o)
    n_a = -(-n_tiles // n)
    last_first = (n_a - 1) * n
    rem = D - (n_tiles - 1) * t_o
    return n_a, n_tiles, last_first, rem


def _cluster_extent_last(c: int, t_o: int, n_tiles: int, last_first: int, rem: int) -> int:
    idx = last_first + c
    if idx < n_tiles - 1:
        return t_o
    return rem if idx == n_tiles - 1 else 0


@lru_cache(maxsize=1 << 16)
def _pe_profile(D: int, t_o: int, t_i: int, n: int, m: int, c: int, p: int) -> tuple:
    """Profile seen by cluster ``c``, PE ``p`` along one dim."""
    n_a, n_tiles, last_first, rem = _inter_geometry(D, t_o, n)
    e_last = _cluster_extent_last(c, t_o, n_tiles, last_first, rem)
    rows = []
    if n_a > 1:
        nb, tot, first = _pieces(t_o, t_i, m, p)
        rows.append((n_a - 1, tot, nb, first))
    if e_last:
        nb, tot, first = _pieces(e_last, t_i, m, p)
        rows.append((1, tot, nb, first))
    return _compress(rows)


def _step_union(extents: Mapping[int, int], t_i: int, m: int, e0: int):
    E = sum(cnt * e for e, cnt in extents.items())
    first = sum(cnt * min(e, t_i * m) for e, cnt in extents.items())
    nb = -(-(-(-e0 // t_i)) // m)
    return E, nb, first


@lru_cache(maxsize=1 << 16)
def _union_profile(D: int, t_o: int, t_i: int, n: int, m: int) -> tuple:
    """Profile of the union over all clusters and PEs (multicast counted once)."""
    n_a, n_tiles, last_first, rem = _inter_geometry(D, t_o, n)
    rows = []
    if n_a > 1:
        rows.append((n_a - 1, *_step_union({t_o: n}, t_i, m, t_o)))
    last: Counter = Counter()
    for c, k in _cluster_classes(D, t_o, n).items():
        last[_cluster_extent_last(c, t_o, n_tiles, last_first, rem)] += k
    last.pop(0, None)
    e0 = _cluster_extent_last(0, t_o, n_tiles, last_first, rem)
    rows.append((1, *_step_union(last, t_i, m, e0)))
    return _compress(rows)


@lru_cache(maxsize=1 << 16)
def _inter_profile(D: int, t_o: int, n: int) -> tuple:
    """Array-level inter tiles only: one intra step covering the whole tile."""
    n_a, n_tiles, last_first, rem = _inter_geometry(D, t_o, n)
    rows = []
    if n_a > 1:
        rows.append((n_a - 1, t_o * n, 1, t_o * n))
    e = sum(_cluster_extent_last(c, t_o, n_tiles, last_first, rem) * k
            for c, k in _cluster_classes(D, t_o, n).items())
    rows.append((1, e, 1, e))
    return _compress(rows)


@lru_cache(maxsize=1 << 16)
def _cluster_classes(D: int, t_o: int, n: int) -> dict[int, int]:
    """Representative cluster index -> number of clusters behaving alike."""
    n_a, n_tiles, last_first, rem = _inter_geometry(D, t_o, n)
    k = n_tiles - 1 - last_first        # the cluster holding the last tile
    out = {}
    if k > 0:
        out[0] = k
    out[k] = 1
    if n - k - 1 > 0:
        out[k + 1] = n - k - 1
    return out


@lru_cache(maxsize=1 << 16)
def _pe_classes(extents: tuple[int, ...], t_i: int, m: int) -> dict[int, int]:
    """Representative PE index -> count, grouping PEs whose pieces agree for every extent."""
    cuts = {0, m}
    for e in extents:
        npc = -(-e // t_i)
        for x in (npc % m, (npc - 1) % m, (npc - 1) % m + 1, npc - 1, npc):
            if 0 <= x <= m:
                cuts.add(x)
    cuts = sorted(cuts)
    groups: dict[tuple, list] = {}
    for lo, hi in zip(cuts, cuts[1:]):
        key = tuple(_pieces(e, t_i, m, lo) for e in extents)
        if key in groups:
            groups[key][1] += hi - lo
        else:
            groups[key] = [lo, hi - lo]
    return {rep: cnt for rep, cnt in groups.values()}


def _volume(prof: Mapping[str, tuple], dims: tuple[str, str], inter_order, intra_order) -> int:
    """Elements fetched for a tensor indexed by ``dims`` under content-change refetch."""
    if any(not prof[x] for x in DIMS):
        return 0
    (y,) = [x for x in DIMS if x not in dims]
    x1, x2 = dims
    n_ay = sum(r[0] for r in prof[y])
    s_y = sum(r[0] * r[2] for r in prof[y])
    inner_intra = [x for x in dims if intra_order.index(x) > intra_order.index(y)]
    inner_inter = [x for x in dims if inter_order.index(x) > inter_order.index(y)]
    n_a = {x: sum(r[0] for r in prof[x]) for x in dims}
    stationary_inter = all(n_a[x] == 1 for x in inner_inter)
    total = same = 0
    for m1, e1, nb1, f1 in prof[x1]:
        for m2, e2, nb2, f2 in prof[x2]:
            nb = {x1: nb1, x2: nb2}
            refetch = any(nb[x] > 1 for x in inner_intra)
            total += m1 * m2 * e1 * e2 * (s_y if refetch else n_ay)
            if nb1 == 1 and nb2 == 1:
                same += m1 * m2 * f1 * f2
    if stationary_inter:
        # consecutive inter steps that only advance y keep the tile in place
        total -= (n_ay - 1) * same
    return total


@dataclass(frozen=True)
class _Geometry:
    size: dict
    t_o: dict
    t_i: dict
    n: dict          # clusters along each dim
    m: dict          # PEs along each dim
    inter_order: tuple
    intra_order: tuple
    n_clusters: int
    cluster: int
    xs: str
    xp: str


def _geometry(genome: Genome, dims, hw: HardwareConfig) -> _Geometry:
    size = dict(zip(DIMS, dims))
    ncl = n_clusters(genome, hw)
    xs, xp = genome.inter.spatial_dim, genome.intra.spatial_dim
    return _Geometry(size, genome.inter.tiles(), genome.intra.tiles(),
                     {x: ncl if x == xs else 1 for x in DIMS},
                     {x: genome.cluster if x == xp else 1 for x in DIMS},
                     genome.inter.order, genome.intra.order, ncl, genome.cluster, xs, xp)


def _args(g: _Geometry, x: str):
    return g.size[x], g.t_o[x], g.t_i[x], g.n[x], g.m[x]


def _tensor_volumes(g: _Geometry) -> dict[str, dict[str, int]]:
    """Per-tensor fill volumes (elements, one batch) at each level."""
    inter = {x: _inter_profile(g.size[x], g.t_o[x], g.n[x]) for x in DIMS}
    union = {x: _union_profile(*_args(g, x)) for x in DIMS}
    out = {t: {"s3": _volume(inter, d, g.inter_order, g.inter_order),
               "s2": _volume(union, d, g.inter_order, g.intra_order),
               "s1": 0}
           for t, d in TENSOR_DIMS.items()}
    # per-PE fills, grouping PEs with identical views
    D, t_o, t_i, n, _ = _args(g, g.xs)
    for c, c_mult in _cluster_classes(D, t_o, n).items():
        if g.xp == g.xs:
            n_a, n_tiles, last_first, rem = _inter_geometry(D, t_o, n)
            ext = (t_o, _cluster_extent_last(c, t_o, n_tiles, last_first, rem))
        else:
            Dp, top, _, _, _ = _args(g, g.xp)
            ext = (top, Dp - (-(-Dp // top) - 1) * top)
        for p, p_mult in _pe_classes(ext, g.t_i[g.xp], g.cluster).items():
            prof = {x: _pe_profile(*_args(g, x), c if x == g.xs else 0, p if x == g.xp else 0)
                    for x in DIMS}
            for t, d in TENSOR_DIMS.items():
                out[t]["s1"] += c_mult * p_mult * _volume(prof, d, g.inter_order, g.intra_order)
    return out


def _compute_cycles(g: _Geometry) -> int:
    # the busiest PE on every step is cluster 0, PE 0
    cycles = 1
    for x in DIMS:
        cycles *= sum(mult * E for mult, E, _, _ in _pe_profile(*_args(g, x), 0, 0))
    return cycles


def compute_cycles(genome: Genome, op: BaseOp, hw: HardwareConfig) -> int:
    """Compute cycles alone; independent of loop order, cheap enough for pruning."""
    g = _geometry(genome, op.dims, hw)
    return _compute_cycles(g) * op.batch + math.ceil(op.epilogue_flops * op.elements / hw.P)


def _first_step_active(g: _Geometry) -> int:
    def pieces(e, x):
        return min(g.m[x], -(-e // g.t_i[x]))
    clusters = min(g.n_clusters, -(-g.size[g.xs] // g.t_o[g.xs]))
    if g.xs == g.xp:
        D, t_o = g.size[g.xs], g.t_o[g.xs]
        return sum(pieces(min(t_o, D - c * t_o), g.xp) for c in range(clusters))
    return clusters * pieces(min(g.t_o[g.xp], g.size[g.xp]), g.xp)


# ------------------------------------------------------------- reports


def _finish(report: CostReport, hw: HardwareConfig) -> CostReport:
    s3_cycles = math.ceil(report.acc_s3 / hw.offchip_bytes_per_cycle)
    s2_cycles = math.ceil(report.acc_s2 / hw.noc_bytes_per_cycle)
    report.mem_bound_cycles = max(s3_cycles, s2_cycles)
    report.latency_cycles = max(report.compute_cycles, report.mem_bound_cycles)
    report.energy_units = (report.mac_count * hw.e_mac + report.acc_s1 * hw.e_s1
                           + report.acc_s2 * hw.e_s2 + report.acc_s3 * hw.e_s3)
    if report.compute_cycles:
        report.pe_utilization = report.mac_count / (report.compute_cycles * hw.P)
    return report


def _tensor_names(op: BaseOp) -> dict[str, str]:
    if op.is_gemm:
        return {"A": op.inputs[0].name, "B": op.inputs[1].name, "C": op.output.name}
    return {"A": op.inputs[0].name, "C": op.output.name}


def evaluate_op(genome: Genome | None, op: BaseOp, hw: HardwareConfig, template="Flexible",
                resident: Iterable[str] = (), validate: bool = True) -> CostReport:
    """Cost of one operator.

    Tensors named in ``resident`` stay on chip (fused neighbours), so they
    cause no off-chip traffic.
    """
    resident = set(resident)
    bpe = op.bytes_per_element
    names = _tensor_names(op)
    if not op.is_gemm:
        return _evaluate_elementwise(op, hw, resident)
    if genome is None:
        raise MappingError(["a GEMM needs a genome"])
    if validate:
        check(genome, op.dims, hw, template, bpe)
    g = _geometry(genome, op.dims, hw)
    vols = _tensor_volumes(g)
    c_elems = op.M * op.N
    level = {"s1": 0, "s2": 0, "s3": 0}
    for t, v in vols.items():
        for lv in level:
            amount = 2 * v[lv] - c_elems if (t == "C" and lv != "s1") else v[lv]
            # a resident tensor never leaves the chip; its PE <-> S2 transfers
            # are already part of the S2 count
            if not (lv == "s3" and names[t] in resident):
                level[lv] += amount
    compute = _compute_cycles(g)
    if compute == 0:
        raise DegenerateMappingError("mapping leaves every PE idle")
    batch = op.batch
    report = CostReport(
        compute_cycles=compute * batch + math.ceil(op.epilogue_flops * op.elements / hw.P),
        acc_s1=bpe * batch * (level["s1"] + 3 * op.M * op.N * op.K),
        acc_s2=bpe * batch * level["s2"],
        acc_s3=bpe * batch * level["s3"],
        mac_count=op.mac_count,
        peak_pe_utilization=_first_step_active(g) / hw.P,
    )
    return _finish(report, hw)


def _evaluate_elementwise(op: BaseOp, hw: HardwareConfig, resident: set[str]) -> CostReport:
    n = op.elements
    bpe = op.bytes_per_element
    # inside a chain the op runs where its resident operand already sits and
    # forwards it to the neighbour stage: one extra S1 access per byte instead
    # of a round trip through S2
    moved = sum(n * bpe for t in (op.inputs[0], op.output) if t.name not in resident)
    forwarded = 2 * n * bpe - moved
    report = CostReport(
        compute_cycles=math.ceil(op.elementwise_flops * n / hw.P),
        acc_s1=2 * n * bpe + forwarded,
        acc_s2=moved,
        acc_s3=moved,
        mac_count=0,
        peak_pe_utilization=min(1.0, n / hw.P),
    )
    return _finish(report, hw)


def evaluate_gemm(M: int, N: int, K: int, genome: Genome, hw: HardwareConfig,
                  template="Flexible", bytes_per_element: int = 1) -> CostReport:
    return evaluate_op(genome, gemm_op(M, N, K, bytes_per_element=bytes_per_element), hw, template)


def _genome_for(genomes, op_id: str):
    if isinstance(genomes, Genome) or genomes is None:
        return genomes
    return genomes.get(op_id)


def chain_resident_sets(ops: list[BaseOp], internal: Iterable[str]) -> dict[str, frozenset]:
    """Tensors each stage may take from S2: internal tensors plus shared
    external inputs already brought in by an earlier stage."""
    internal = set(internal)
    seen: set[str] = set()
    out = {}
    for op in ops:
        names = {t.name for t in op.tensors}
        out[op.id] = frozenset((internal | seen) & names)
        seen |= {t.name for t in op.inputs}
    return out


def evaluate_chain(genomes, chain: FusedChain, dims: ModelDims, hw: HardwareConfig,
                   template="Flexible") -> CostReport:
    if chain.s2_working_set > hw.S2:
        biggest = max(chain.internal_tensors, key=lambda t: t.elements, default=None)
        name = biggest.name if biggest else chain.name
        raise FeasibilityError(f"{chain.name} needs {chain.s2_working_set} B of S2 "
                               f"(> {hw.S2} B); tensor {name} overflows")
    ops = [op for op in build_layer(dims) if op.id in chain.base_ops]
    res = chain_resident_sets(ops, chain.internal_names)
    reports = [evaluate_op(_genome_for(genomes, op.id), op, hw, template, res[op.id]) for op in ops]
    return CostReport.combine(reports, hw.P)


@dataclass
class LayerReport:
    code: FusionCode
    total: CostReport
    stages: dict[str, CostReport] = field(default_factory=dict)


def evaluate_layer(code, genomes, dims: ModelDims, hw: HardwareConfig,
                   template="Flexible") -> LayerReport:
    """Cost of one layer under fusion code ``code``; ``genomes`` maps op id to genome."""
    dec: DecodedCode = decode(code, dims)
    ok, bad = feasible(dec.code, dims, hw)
    if not ok:
        raise FeasibilityError(f"fusion code {dec.code} infeasible: {bad.name} needs "
                               f"{bad.s2_working_set} B of S2 (> {hw.S2} B)")
    layer = {op.id: op for op in build_layer(dims)}
    stages: dict[str, CostReport] = {}
    for chain in dec.chains:
        stages[chain.name] = evaluate_chain(genomes, chain, dims, hw, template)
    for op_id in dec.unfused:
        stages[op_id] = evaluate_op(_genome_for(genomes, op_id), layer[op_id], hw, template)
    return LayerReport(dec.code, CostReport.combine(stages.values(), hw.P), stages)


def refetch_free_genome(op_dims, hw: HardwareConfig, bytes_per_element: int = 1) -> Genome:
    """A genome whose off-chip traffic is exactly compulsory: the whole N and K
    extents stay in S2 and only M is walked (inter order M, N, K)."""
    M, N, K = op_dims
    for t_m in sorted({t for t in range(1, M + 1) if M % t == 0} | {1}, reverse=True):
        g = Genome(
            Level((Directive("S", "M", t_m), Directive("T", "N", N), Directive("T", "K", K))),
            Level((Directive("S", "M", 1), Directive("T", "N", 1), Directive("T", "K", 1))),
            1,
        )
        try:
            return check(g, op_dims, hw, "Flexible", bytes_per_element)
        except MappingError:
            continue
    raise MappingError([f"no refetch-free genome fits S2={hw.S2} B for dims {op_dims}"])
