"""Two-level data-centric mapping directives.

A genome holds an inter-cluster level, a cluster size and an intra-cluster
level.  Each level lists three directives (one per GEMM dim) from the
outermost to the innermost loop; exactly one of them is a SpatialMap.

Text form, one level per line::

    SpatialMap(1,1) N; TemporalMap(3,3) M; TemporalMap(3,3) K
    Cluster(2); SpatialMap(1,1) K; TemporalMap(1,1) M; TemporalMap(1,1) N
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from itertools import permutations
from typing import Iterator

from .hardware import HardwareConfig

DIMS = ("M", "N", "K")
# operands of C[M,N] += A[M,K] * B[K,N]
TENSOR_DIMS = {"A": ("M", "K"), "B": ("K", "N"), "C": ("M", "N")}


class MappingError(ValueError):
    """Invalid genome; ``violations`` lists every failed rule."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class CapacityError(ValueError):
    """No tiling fits the scratchpads."""


@dataclass(frozen=True)
class Directive:
    kind: str        # "S" (SpatialMap) or "T" (TemporalMap)
    dim: str
    size: int
    offset: int | None = None

    def __post_init__(self):
        if self.offset is None:
            object.__setattr__(self, "offset", self.size)

    @property
    def spatial(self) -> bool:
        return self.kind == "S"

    def __str__(self) -> str:
        name = "SpatialMap" if self.spatial else "TemporalMap"
        return f"{name}({self.size},{self.offset}) {self.dim}"


@dataclass(frozen=True)
class Level:
    directives: tuple[Directive, Directive, Directive]

    @cached_property
    def order(self) -> tuple[str, ...]:
        return tuple(d.dim for d in self.directives)

    @cached_property
    def spatial_dim(self) -> str | None:
        dims = [d.dim for d in self.directives if d.spatial]
        return dims[0] if len(dims) == 1 else None

    def tile(self, dim: str) -> int:
        for d in self.directives:
            if d.dim == dim:
                return d.size
        raise KeyError(dim)

    def tiles(self) -> dict[str, int]:
        return {d.dim: d.size for d in self.directives}

    def with_tile(self, dim: str, size: int) -> "Level":
        return Level(tuple(replace(d, size=size, offset=size) if d.dim == dim else d
                           for d in self.directives))

    def style(self) -> str:
        """Template-style string such as ``TTS-NMK``."""
        return "".join(d.kind for d in self.directives) + "-" + "".join(self.order)

    def __str__(self) -> str:
        return "; ".join(str(d) for d in self.directives)


@dataclass(frozen=True)
class Genome:
    inter: Level
    intra: Level
    cluster: int

    def to_text(self) -> str:
        return f"{self.inter}\nCluster({self.cluster}); {self.intra}"

    __str__ = to_text

    def structure(self) -> tuple:
        """Everything except tile sizes."""
        return (self.inter.style(), self.intra.style(), self.cluster)

    def tile_slots(self) -> dict[tuple[str, str], int]:
        out = {("inter", dim): size for dim, size in self.inter.tiles().items()}
        out.update({("intra", dim): size for dim, size in self.intra.tiles().items()})
        return out

    def with_tile(self, level: str, dim: str, size: int) -> "Genome":
        if level == "inter":
            return replace(self, inter=self.inter.with_tile(dim, size))
        return replace(self, intra=self.intra.with_tile(dim, size))


_DIRECTIVE_RE = re.compile(
    r"^(SpatialMap|TemporalMap)\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*([MNK])$")
_CLUSTER_RE = re.compile(r"^Cluster\s*\(\s*(\d+)\s*\)$")


def parse_genome(text: str) -> Genome:
    """Parse the directive text form; raises ``MappingError`` on malformed input."""
    statements = [s.strip() for s in re.split(r"[;\n]", text) if s.strip()]
    inter: list[Directive] = []
    intra: list[Directive] = []
    cluster = None
    for stmt in statements:
        m = _CLUSTER_RE.match(stmt)
        if m:
            if cluster is not None:
                raise MappingError([f"duplicate Cluster directive: {stmt!r}"])
            cluster = int(m.group(1))
            continue
        m = _DIRECTIVE_RE.match(stmt)
        if not m:
            raise MappingError([f"unparseable directive: {stmt!r}"])
        kind = "S" if m.group(1) == "SpatialMap" else "T"
        d = Directive(kind, m.group(4), int(m.group(2)), int(m.group(3)))
        (inter if cluster is None else intra).append(d)
    if cluster is None:
        raise MappingError(["missing Cluster directive"])
    if len(inter) != 3 or len(intra) != 3:
        raise MappingError([f"each level needs 3 directives, got {len(inter)} inter and "
                            f"{len(intra)} intra"])
    return Genome(Level(tuple(inter)), Level(tuple(intra)), cluster)


_SECTION_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_]+)\s*\]\s*$")


def parse_genome_set(text: str) -> "Genome | dict[str, Genome]":
    """One genome, or ``[OpId]``-headed sections giving one genome per operator."""
    sections: dict[str, list[str]] = {}
    current = None
    loose: list[str] = []
    for line in text.splitlines():
        if line.strip().startswith("#"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise MappingError([f"duplicate section [{current}]"])
            sections[current] = []
        elif current is None:
            loose.append(line)
        else:
            sections[current].append(line)
    if not sections:
        return parse_genome("\n".join(loose))
    if any(l.strip() for l in loose):
        raise MappingError(["directives found before the first [OpId] section"])
    return {name: parse_genome("\n".join(lines)) for name, lines in sections.items()}


def format_genome_set(genomes: "dict[str, Genome]") -> str:
    return "".join(f"[{name}]\n{g.to_text()}\n" for name, g in genomes.items())


# ---------------------------------------------------------------- templates


@dataclass(frozen=True)
class AcceleratorTemplate:
    name: str
    inter_style: str | None = None   # e.g. "STT-MNK"; None = free
    intra_style: str | None = None
    supports_spatial_reduction: bool = True

    @property
    def per_operator_dataflow(self) -> bool:
        return self.inter_style is None

    @property
    def fixed(self) -> bool:
        return not self.per_operator_dataflow

    def cluster_size(self, P: int) -> int | None:
        return max(1, math.isqrt(P)) if self.fixed else None


def style_level(style: str, tiles: dict[str, int]) -> Level:
    return _style_level(style, tiles["M"], tiles["N"], tiles["K"])


@lru_cache(maxsize=65536)
def _style_level(style: str, m: int, n: int, k: int) -> Level:
    kinds, dims = style.split("-")
    tiles = {"M": m, "N": n, "K": k}
    return Level(tuple(Directive(c, d, tiles[d]) for c, d in zip(kinds, dims)))


TEMPLATES: dict[str, AcceleratorTemplate] = {
    t.name: t for t in (
        AcceleratorTemplate("ShiDianNao-like", "STT-MNK", "TST-MNK", supports_spatial_reduction=False),
        AcceleratorTemplate("NVDLA-like", "STT-MNK", "TTS-NMK"),
        AcceleratorTemplate("Eyeriss-like", "STT-NMK", "TTS-MNK"),
        AcceleratorTemplate("TPU-like", "STT-MKN", "STT-KMN"),
        AcceleratorTemplate("Flexible"),
    )
}
FLEXIBLE = TEMPLATES["Flexible"]
FIXED_TEMPLATES = tuple(t for t in TEMPLATES.values() if t.fixed)


def get_template(name: "str | AcceleratorTemplate") -> AcceleratorTemplate:
    if isinstance(name, AcceleratorTemplate):
        return name
    try:
        return TEMPLATES[name]
    except KeyError:
        raise ValueError(f"unknown accelerator template {name!r}; "
                         f"choose from {sorted(TEMPLATES)}") from None


# ---------------------------------------------------------------- choices


@lru_cache(maxsize=None)
def tile_choices(n: int) -> tuple[int, ...]:
    """Divisors of ``n`` plus powers of two below it (remainder tiles allowed)."""
    out = {i for i in range(1, math.isqrt(n) + 1) if n % i == 0}
    out |= {n // i for i in out}
    p = 1
    while p <= n:
        out.add(p)
        p *= 2
    return tuple(sorted(out))


def cluster_choices(P: int) -> tuple[int, ...]:
    return tile_choices(P)


def _tile_pairs(n: int) -> int:
    k = len(tile_choices(n))
    return k * (k + 1) // 2


@dataclass(frozen=True)
class MappingSpace:
    dims: tuple[int, int, int]
    P: int
    template: str
    count: int

    @property
    def log10(self) -> float:
        return math.log10(self.count)


def count_mapping_space(op_dims, hw: HardwareConfig, template="Flexible") -> MappingSpace:
    """Structural size of the genome space (capacity limits not applied)."""
    template = get_template(template)
    tiles = 1
    for n in op_dims:
        tiles *= _tile_pairs(n)
    if template.fixed:
        count = tiles
    else:
        per_level = 3 * math.factorial(3)
        count = len(cluster_choices(hw.P)) * per_level**2 * tiles
    return MappingSpace(tuple(op_dims), hw.P, template.name, count)


def _level_structures(supports_reduction: bool):
    for order in permutations(DIMS):
        for pos in range(3):
            if order[pos] == "K" and not supports_reduction:
                continue
            yield order, pos


def iter_genomes(op_dims, hw: HardwareConfig, template="Flexible") -> Iterator[Genome]:
    """Every structurally complete genome (not yet capacity-checked)."""
    template = get_template(template)
    size = dict(zip(DIMS, op_dims))
    pairs = {d: [(o, i) for o in tile_choices(size[d]) for i in tile_choices(size[d]) if i <= o]
             for d in DIMS}
    if template.fixed:
        structures = [(template.inter_style, template.intra_style, template.cluster_size(hw.P))]
    else:
        lv = [f"{''.join('S' if k == pos else 'T' for k in range(3))}-{''.join(order)}"
              for order, pos in _level_structures(template.supports_spatial_reduction)]
        structures = [(a, b, c) for c in cluster_choices(hw.P) for a in lv for b in lv]
    for inter_style, intra_style, c in structures:
        for pm in pairs["M"]:
            for pn in pairs["N"]:
                for pk in pairs["K"]:
                    outer = {"M": pm[0], "N": pn[0], "K": pk[0]}
                    inner = {"M": pm[1], "N": pn[1], "K": pk[1]}
                    yield Genome(style_level(inter_style, outer), style_level(intra_style, inner), c)


def iter_genome_groups(op_dims, hw: HardwareConfig, template="Flexible"):
    """Genomes grouped by everything except temporal loop order.

    Yields ``(representative, members)`` where ``members`` is a callable
    producing every genome of the group. Compute cycles and buffer footprints
    are shared by all members of a group.
    """
    template = get_template(template)
    size = dict(zip(DIMS, op_dims))
    pairs = {d: [(o, i) for o in tile_choices(size[d]) for i in tile_choices(size[d]) if i <= o]
             for d in DIMS}
    if template.fixed:
        by_spatial = {None: [(template.inter_style, template.intra_style)]}
        clusters = [template.cluster_size(hw.P)]
    else:
        styles: dict[str, list[str]] = {}
        for order, pos in _level_structures(template.supports_spatial_reduction):
            st = f"{''.join('S' if k == pos else 'T' for k in range(3))}-{''.join(order)}"
            styles.setdefault(order[pos], []).append(st)
        by_spatial = {(a, b): [(x, y) for x in styles[a] for y in styles[b]]
                      for a in styles for b in styles}
        clusters = cluster_choices(hw.P)
    for c in clusters:
        for combos in by_spatial.values():
            for pm in pairs["M"]:
                for pn in pairs["N"]:
                    for pk in pairs["K"]:
                        outer = {"M": pm[0], "N": pn[0], "K": pk[0]}
                        inner = {"M": pm[1], "N": pn[1], "K": pk[1]}

                        def members(outer=outer, inner=inner, combos=combos, c=c):
                            for a, b in combos:
                                yield Genome(style_level(a, outer), style_level(b, inner), c)

                        a, b = combos[0]
                        yield Genome(style_level(a, outer), style_level(b, inner), c), members


# ---------------------------------------------------------------- validity


def n_clusters(genome: Genome, hw: HardwareConfig) -> int:
    return max(1, hw.P // genome.cluster)


def s1_footprint(genome: Genome, bytes_per_element: int = 1) -> int:
    t = genome.intra.tiles()
    return bytes_per_element * sum(t[a] * t[b] for a, b in TENSOR_DIMS.values())


def s2_footprint(genome: Genome, op_dims, hw: HardwareConfig, bytes_per_element: int = 1) -> int:
    """Bytes staged in S2 for one inter-cluster step (all clusters together)."""
    size = dict(zip(DIMS, op_dims))
    t = dict(genome.inter.tiles())
    sd = genome.inter.spatial_dim
    if sd is not None:
        t[sd] = min(size[sd], t[sd] * n_clusters(genome, hw))
    t = {d: min(t[d], size[d]) for d in DIMS}
    return bytes_per_element * sum(t[a] * t[b] for a, b in TENSOR_DIMS.values())


def validate(genome: Genome, op_dims, hw: HardwareConfig, template="Flexible",
             bytes_per_element: int = 1) -> list[str]:
    """All violated rules, each naming the offending directive; empty means valid."""
    template = get_template(template)
    size = dict(zip(DIMS, op_dims))
    errors: list[str] = []
    for lname, level in (("inter", genome.inter), ("intra", genome.intra)):
        if sorted(level.order) != sorted(DIMS):
            errors.append(f"{lname}: dims {level.order} must cover M, N, K exactly once")
        n_spatial = sum(d.spatial for d in level.directives)
        if n_spatial != 1:
            errors.append(f"{lname}: {n_spatial} SpatialMap directives, expected exactly 1")
        for d in level.directives:
            if d.size < 1 or d.offset < 1:
                errors.append(f"{lname} {d}: size and offset must be >= 1")
            elif d.offset > d.size:
                errors.append(f"{lname} {d}: offset larger than size skips elements")
            elif d.offset != d.size:
                errors.append(f"{lname} {d}: overlapping offsets are not evaluated")
            if d.dim in size and d.size > size[d.dim]:
                errors.append(f"{lname} {d}: tile exceeds dimension {d.dim}={size[d.dim]}")
    if errors:
        return errors
    for dim in DIMS:
        if genome.intra.tile(dim) > genome.inter.tile(dim):
            errors.append(f"intra {dim}: tile {genome.intra.tile(dim)} exceeds inter tile "
                          f"{genome.inter.tile(dim)}")
    if not 1 <= genome.cluster <= hw.P:
        errors.append(f"Cluster({genome.cluster}): must be within 1..P={hw.P}")
    s1 = s1_footprint(genome, bytes_per_element)
    if s1 > hw.S1:
        errors.append(f"intra tiles need {s1} B per PE, S1 holds {hw.S1} B")
    s2 = s2_footprint(genome, op_dims, hw, bytes_per_element)
    if s2 > hw.S2:
        errors.append(f"inter tiles need {s2} B in S2, S2 holds {hw.S2} B")
    if not template.supports_spatial_reduction:
        for lname, level in (("inter", genome.inter), ("intra", genome.intra)):
            if level.spatial_dim == "K":
                errors.append(f"{lname} SpatialMap K: {template.name} has no spatial reduction")
    if template.fixed:
        if genome.inter.style() != template.inter_style:
            errors.append(f"inter style {genome.inter.style()} != {template.name} "
                          f"{template.inter_style}")
        if genome.intra.style() != template.intra_style:
            errors.append(f"intra style {genome.intra.style()} != {template.name} "
                          f"{template.intra_style}")
        if genome.cluster != template.cluster_size(hw.P):
            errors.append(f"Cluster({genome.cluster}) != {template.name} cluster size "
                          f"{template.cluster_size(hw.P)}")
    return errors


def check(genome: Genome, op_dims, hw: HardwareConfig, template="Flexible",
          bytes_per_element: int = 1) -> Genome:
    errors = validate(genome, op_dims, hw, template, bytes_per_element)
    if errors:
        raise MappingError(errors)
    return genome


# ---------------------------------------------------------------- construction


def _shrink(n: int, size: int) -> int:
    smaller = [t for t in tile_choices(n) if t < size]
    return smaller[-1] if smaller else size


def repair(genome: Genome, op_dims, hw: HardwareConfig, bytes_per_element: int = 1) -> Genome:
    """Clamp tiles into range and shrink them until both scratchpads fit."""
    size = dict(zip(DIMS, op_dims))
    g = replace(genome, cluster=min(max(genome.cluster, 1), hw.P))
    for dim in DIMS:
        g = g.with_tile("inter", dim, max(1, min(g.inter.tile(dim), size[dim])))
        g = g.with_tile("intra", dim, max(1, min(g.intra.tile(dim), g.inter.tile(dim))))
    while s2_footprint(g, op_dims, hw, bytes_per_element) > hw.S2:
        dim = max(DIMS, key=lambda x: (g.inter.tile(x), -DIMS.index(x)))
        if g.inter.tile(dim) == 1:
            raise CapacityError(f"S2={hw.S2} B cannot hold a 1x1x1 tile")
        g = g.with_tile("inter", dim, _shrink(size[dim], g.inter.tile(dim)))
        g = g.with_tile("intra", dim, min(g.intra.tile(dim), g.inter.tile(dim)))
    while s1_footprint(g, bytes_per_element) > hw.S1:
        dim = max(DIMS, key=lambda x: (g.intra.tile(x), -DIMS.index(x)))
        if g.intra.tile(dim) == 1:
            raise CapacityError(f"S1={hw.S1} B cannot hold a 1x1x1 tile")
        g = g.with_tile("intra", dim, _shrink(size[dim], g.intra.tile(dim)))
    return g


def _random_level(rng: random.Random, supports_reduction: bool) -> tuple[str, ...]:
    order, pos = rng.choice(list(_level_structures(supports_reduction)))
    return "".join("S" if k == pos else "T" for k in range(3)) + "-" + "".join(order)


def random_genome(op_dims, hw: HardwareConfig, template="Flexible", rng: random.Random | None = None,
                  bytes_per_element: int = 1) -> Genome:
    """Uniformly drawn structure and tiles, repaired to validity."""
    template = get_template(template)
    rng = rng or random.Random(0)
    size = dict(zip(DIMS, op_dims))
    if template.fixed:
        inter_style, intra_style = template.inter_style, template.intra_style
        c = template.cluster_size(hw.P)
    else:
        inter_style = _random_level(rng, template.supports_spatial_reduction)
        intra_style = _random_level(rng, template.supports_spatial_reduction)
        c = rng.choice(cluster_choices(hw.P))
    outer = {d: rng.choice(tile_choices(size[d])) for d in DIMS}
    inner = {d: rng.choice([t for t in tile_choices(size[d]) if t <= outer[d]]) for d in DIMS}
    g = Genome(style_level(inter_style, outer), style_level(intra_style, inner), c)
    return repair(g, op_dims, hw, bytes_per_element)


def default_genome(template, op_dims, hw: HardwareConfig, bytes_per_element: int = 1,
                   seed: int = 0) -> Genome:
    """Fixed templates: their style with the largest tiles that fit.
    Flexible: a seeded random valid genome."""
    template = get_template(template)
    if not template.fixed:
        return random_genome(op_dims, hw, template, random.Random(seed), bytes_per_element)
    size = dict(zip(DIMS, op_dims))
    c = template.cluster_size(hw.P)
    inter = style_level(template.inter_style, size)
    inner = dict(size)
    sd = style_level(template.intra_style, size).spatial_dim
    inner[sd] = math.ceil(size[sd] / c)
    inner = {d: max(t for t in tile_choices(size[d]) if t <= inner[d]) for d in DIMS}
    g = Genome(inter, style_level(template.intra_style, inner), c)
    return repair(g, op_dims, hw, bytes_per_element)
