"""Genetic mapping search per fusion code, exhaustive oracle, Pareto fronts."""
from __future__ import annotations

import math
import os
import random
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .costmodel import (CostReport, FeasibilityError, _tensor_names, chain_resident_sets,
                        compute_cycles, evaluate_op)
from .fusion import FusionCode, all_codes, decode, feasible
from .hardware import HardwareConfig
from .mapping import (DIMS, FIXED_TEMPLATES, AcceleratorTemplate, CapacityError, Genome, Level,
                      cluster_choices, count_mapping_space, default_genome, get_template,
                      iter_genome_groups, iter_genomes, n_clusters, random_genome, repair,
                      s1_footprint, s2_footprint, tile_choices, validate)
from .workload import BaseOp, ModelDims, build_layer, gemm_op

LATENCY_BAND = 1e-3


class SearchSpaceTooLarge(ValueError):
    def __init__(self, count: int, cap: int):
        self.count = count
        super().__init__(f"mapping space has {count} genomes, above the cap of {cap}")


OBJECTIVES: dict[str, Callable] = {
    "latency": lambda r, g, op, hw: r.latency_cycles,
    "energy": lambda r, g, op, hw: r.energy_units,
    "S1": lambda r, g, op, hw: s1_footprint(g, op.bytes_per_element) if g else 0,
    "S2": lambda r, g, op, hw: s2_footprint(g, op.dims, hw, op.bytes_per_element) if g else 0,
    "P": lambda r, g, op, hw: round(r.peak_pe_utilization * hw.P),
}


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    generations: int = 100
    crossover_rate: float = 0.6
    mutation_rate: float = 0.3
    reorder_rate: float = 0.1
    elite_fraction: float = 0.05
    # stop once the first objective reaches this value (None: run every generation)
    fitness_threshold: float | None = None
    seed: int = 0
    objectives: tuple[str, str] = ("latency", "energy")

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "reorder_rate", "elite_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crossover_rate + self.mutation_rate + self.reorder_rate <= 0:
            raise ValueError("at least one genetic operator needs a positive rate")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        objectives = tuple(self.objectives)
        if len(objectives) != 2 or len(set(objectives)) != 2:
            raise ValueError("objectives must be two distinct names")
        unknown = set(objectives) - set(OBJECTIVES)
        if unknown:
            raise ValueError(f"unknown objectives {sorted(unknown)}; choose from {sorted(OBJECTIVES)}")
        object.__setattr__(self, "objectives", objectives)


# ---------------------------------------------------------------- operators


def _check_pair(a, b):
    if not isinstance(a, Genome) or not isinstance(b, Genome):
        raise TypeError("crossover needs two Genome parents")


def _repaired(g: Genome, op_dims, hw, bpe) -> Genome | None:
    if op_dims is None or hw is None:
        return g
    try:
        return repair(g, op_dims, hw, bpe)
    except CapacityError:
        return None


def crossover(a: Genome, b: Genome, rng: random.Random, op_dims=None,
              hw: HardwareConfig | None = None, bytes_per_element: int = 1) -> tuple[Genome, Genome]:
    """Swap the tile size at one random (level, dim) slot."""
    _check_pair(a, b)
    level = rng.choice(("inter", "intra"))
    dim = rng.choice(DIMS)
    ta = getattr(a, level).tile(dim)
    tb = getattr(b, level).tile(dim)
    ca = _repaired(a.with_tile(level, dim, tb), op_dims, hw, bytes_per_element) or a
    cb = _repaired(b.with_tile(level, dim, ta), op_dims, hw, bytes_per_element) or b
    return ca, cb


def _move_spatial(level: Level, target: int) -> Level:
    return Level(tuple(replace(d, kind="S" if i == target else "T")
                       for i, d in enumerate(level.directives)))


def mutate(genome: Genome, template, rng: random.Random, op_dims, hw: HardwareConfig,
           bytes_per_element: int = 1, retries: int = 20) -> Genome:
    """New spatial dim / cluster size (Flexible only) plus one resampled tile."""
    template = get_template(template)
    size = dict(zip(DIMS, op_dims))
    if all(v == 1 for v in size.values()):
        return genome           # every mapping of a 1x1x1 op is equivalent
    for _ in range(retries):
        g = genome
        if not template.fixed:
            if rng.random() < 0.5:
                lname = rng.choice(("inter", "intra"))
                level = getattr(g, lname)
                allowed = [i for i, d in enumerate(level.directives)
                           if template.supports_spatial_reduction or d.dim != "K"]
                g = replace(g, **{lname: _move_spatial(level, rng.choice(allowed))})
            if rng.random() < 0.25:
                g = replace(g, cluster=rng.choice(cluster_choices(hw.P)))
        lname = rng.choice(("inter", "intra"))
        dim = rng.choice(DIMS)
        cap = size[dim] if lname == "inter" else g.inter.tile(dim)
        g = g.with_tile(lname, dim, rng.choice([t for t in tile_choices(size[dim]) if t <= cap]))
        g = _repaired(g, op_dims, hw, bytes_per_element)
        if g is not None and g != genome and not validate(g, op_dims, hw, template, bytes_per_element):
            return g
    return genome


def reorder(genome: Genome, rng: random.Random, template="Flexible") -> Genome:
    """Swap the loop positions of the two temporal directives of one level."""
    if get_template(template).fixed:
        return genome
    lname = rng.choice(("inter", "intra"))
    level = getattr(genome, lname)
    ds = list(level.directives)
    i, j = [k for k, d in enumerate(ds) if not d.spatial]
    ds[i], ds[j] = ds[j], ds[i]
    return replace(genome, **{lname: Level(tuple(ds))})


# ---------------------------------------------------------------- GA core


@dataclass
class TraceRow:
    generation: int
    best_latency: float
    best_energy: float


@dataclass
class OpSearch:
    genome: Genome | None
    report: CostReport
    trace: list[TraceRow]
    evaluated: int = 0


class _Fitness:
    def __init__(self, op: BaseOp, hw, template, resident, objectives):
        self.op, self.hw, self.template, self.resident = op, hw, template, frozenset(resident)
        self.objectives = objectives
        self.cache: dict[Genome, tuple] = {}
        self.reports: dict[Genome, CostReport] = {}

    def key(self, g: Genome) -> tuple:
        k = self.cache.get(g)
        if k is None:
            r = evaluate_op(g, self.op, self.hw, self.template, self.resident, validate=False)
            f1, f2 = (OBJECTIVES[o](r, g, self.op, self.hw) for o in self.objectives)
            k = (f1, f2, g.to_text())
            self.cache[g] = k
            self.reports[g] = r
        return k


def _valid(g, op, hw, template) -> bool:
    return not validate(g, op.dims, hw, template, op.bytes_per_element)


def search_op(op: BaseOp, hw: HardwareConfig, template="Flexible", cfg: GaConfig = GaConfig(),
              resident: Iterable[str] = (), seeds: Sequence[Genome] = (),
              seed: int | None = None) -> OpSearch:
    """GA over genomes of one operator; softmax-like ops need no search."""
    template = get_template(template)
    if not op.is_gemm:
        r = evaluate_op(None, op, hw, template, resident)
        return OpSearch(None, r, [TraceRow(g, r.latency_cycles, r.energy_units)
                                  for g in range(cfg.generations + 1)])
    rng = random.Random(cfg.seed if seed is None else seed)
    fit = _Fitness(op, hw, template, resident, cfg.objectives)
    bpe = op.bytes_per_element
    pop_n = cfg.population_size

    pool: dict[Genome, None] = {}
    for g in seeds:
        g = _repaired(g, op.dims, hw, bpe)
        if g is not None and _valid(g, op, hw, template):
            pool[g] = None
    if template.fixed:
        try:
            pool.setdefault(default_genome(template, op.dims, hw, bpe), None)
        except CapacityError:
            pass
    attempts = 0
    while len(pool) < pop_n and attempts < 20 * pop_n:
        attempts += 1
        try:
            g = random_genome(op.dims, hw, template, rng, bpe)
        except CapacityError:
            continue
        if _valid(g, op, hw, template):
            pool.setdefault(g, None)
    if not pool:
        raise CapacityError(f"no valid genome for {op.id} {op.dims} under {template.name}")
    parents = sorted(pool, key=fit.key)[:pop_n]
    trace = [TraceRow(0, *fit.key(parents[0])[:2])]

    rates = (cfg.crossover_rate, cfg.mutation_rate, cfg.reorder_rate)
    total = sum(rates)
    n_elite = max(1, math.ceil(cfg.elite_fraction * pop_n))
    for gen in range(1, cfg.generations + 1):
        if cfg.fitness_threshold is not None and fit.key(parents[0])[0] <= cfg.fitness_threshold:
            trace.append(TraceRow(gen, *fit.key(parents[0])[:2]))
            continue
        elites = parents[:n_elite]
        median = fit.key(parents[len(parents) // 2])
        children: dict[Genome, None] = {}
        for _ in range(pop_n - n_elite):
            r = rng.random() * total
            if r < rates[0] and len(parents) >= 2:
                a, b = rng.sample(parents, 2)
                for c in crossover(a, b, rng, op.dims, hw, bpe):
                    children.setdefault(c, None)
            elif r < rates[0] + rates[1]:
                children.setdefault(mutate(rng.choice(parents), template, rng, op.dims, hw, bpe), None)
            else:
                c = reorder(rng.choice(parents), rng, template)
                if _valid(c, op, hw, template):
                    children.setdefault(c, None)
        # children must beat the median parent to enter the pool
        current = set(parents)
        accepted = sorted((c for c in children if c not in current and fit.key(c) < median),
                          key=fit.key)
        survivors = elites + accepted[:pop_n - n_elite]
        survivors += parents[n_elite:][:pop_n - len(survivors)]
        parents = sorted(survivors, key=fit.key)
        trace.append(TraceRow(gen, *fit.key(parents[0])[:2]))
    best = parents[0]
    return OpSearch(best, fit.reports[best], trace, len(fit.cache))


# ---------------------------------------------------------------- exhaustive oracle


@dataclass
class Optimum:
    latency: int
    energy: float
    genome: Genome
    report: CostReport
    evaluated: int


def _as_op(target, bytes_per_element: int = 1) -> BaseOp:
    if isinstance(target, BaseOp):
        return target
    M, N, K = target
    return gemm_op(M, N, K, bytes_per_element=bytes_per_element)


def exhaustive_oracle(target, hw: HardwareConfig, template="Flexible", bytes_per_element: int = 1,
                      cap: int = 10**6, objectives=("latency", "energy")) -> Optimum:
    """Evaluate every valid genome and return the lexicographic optimum.

    With latency first, loop orders are expanded only for (cluster, spatial
    dims, tiles) choices whose compute cycles, a lower bound on latency that
    no loop order changes, can still reach the incumbent.
    """
    op = _as_op(target, bytes_per_element)
    template = get_template(template)
    space = count_mapping_space(op.dims, hw, template)
    if space.count > cap:
        raise SearchSpaceTooLarge(space.count, cap)
    best = None
    n = 0
    for g in _bounded_candidates(op, hw, template, objectives, lambda: best):
        n += 1
        r = evaluate_op(g, op, hw, template, validate=False)
        k = tuple(OBJECTIVES[o](r, g, op, hw) for o in objectives) + (g.to_text(),)
        if best is None or k < best[0]:
            best = (k, g, r)
    if best is None:
        raise CapacityError(f"no valid genome for dims {op.dims}")
    _, g, r = best
    return Optimum(r.latency_cycles, r.energy_units, g, r, n)


def _bounded_candidates(op: BaseOp, hw: HardwareConfig, template: AcceleratorTemplate,
                        objectives, incumbent):
    bpe = op.bytes_per_element
    if objectives[0] != "latency":
        for g in iter_genomes(op.dims, hw, template):
            if s1_footprint(g, bpe) <= hw.S1 and s2_footprint(g, op.dims, hw, bpe) <= hw.S2:
                yield g
        return
    ranked = []
    for i, (rep, members) in enumerate(iter_genome_groups(op.dims, hw, template)):
        if s1_footprint(rep, bpe) > hw.S1 or s2_footprint(rep, op.dims, hw, bpe) > hw.S2:
            continue
        ranked.append((compute_cycles(rep, op, hw), i, members))
    ranked.sort(key=lambda t: t[:2])
    for bound, _, members in ranked:
        current = incumbent()
        if current is not None and bound > current[0][0]:
            return
        yield from _distinct_orders(members(), op.dims, hw)


def _distinct_orders(genomes, op_dims, hw: HardwareConfig):
    """Drop loop orders that differ only in single-trip loops (identical costs).

    Keeps the textually smallest genome of each equivalence class so the
    lexicographic tie-break is unchanged.
    """
    size = dict(zip(DIMS, op_dims))
    keep: dict[tuple, Genome] = {}
    for g in genomes:
        t_o, t_i = g.inter.tiles(), g.intra.tiles()
        ncl = n_clusters(g, hw)
        n_a = {x: -(-size[x] // (t_o[x] * (ncl if x == g.inter.spatial_dim else 1))) for x in DIMS}
        n_b = {x: -(-(-(-t_o[x] // t_i[x])) // (g.cluster if x == g.intra.spatial_dim else 1))
               for x in DIMS}
        key = (tuple(x for x in g.inter.order if n_a[x] > 1),
               tuple(x for x in g.intra.order if n_b[x] > 1))
        if key not in keep or g.to_text() < keep[key].to_text():
            keep[key] = g
    yield from keep.values()


# ---------------------------------------------------------------- layer search


@dataclass
class ParetoPoint:
    latency: int
    energy: float
    s2_needed: int
    code: str
    template: str
    genomes: dict[str, Genome] = field(repr=False, default_factory=dict)


@dataclass
class SearchResult:
    code: str
    template: str
    genomes: dict[str, Genome]
    report: CostReport
    stages: dict[str, CostReport]
    pareto: list[ParetoPoint]
    trace: list[TraceRow]
    feasible_codes: list[str] = field(default_factory=list)
    # winning genome per stage key, reusable as ``full_search(warm_start=...)``
    stage_genomes: dict = field(default_factory=dict, repr=False)


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points over (latency, energy), one per distinct value pair."""
    ordered = sorted(points, key=lambda p: (p.latency, p.energy, p.code, p.template))
    front: list[ParetoPoint] = []
    best_energy = math.inf
    for p in ordered:
        if p.energy < best_energy:
            front.append(p)
            best_energy = p.energy
    return front


def _select(points: Sequence[ParetoPoint]) -> ParetoPoint:
    """Lowest latency, with energy deciding inside a 0.1% latency band."""
    lo = min(p.latency for p in points)
    band = [p for p in points if p.latency <= lo * (1 + LATENCY_BAND)]
    return min(band, key=lambda p: (p.energy, p.latency, p.code, p.template))


def _stage_key(op: BaseOp, resident: frozenset) -> tuple:
    names = _tensor_names(op)
    roles = frozenset(role for role, name in names.items() if name in resident)
    return (op.kind, op.M, op.N, op.K, op.batch, op.bytes_per_element, op.epilogue_flops,
            op.elementwise_flops, roles)


def _stage_seed(key: tuple, base: int) -> int:
    return zlib.crc32(repr((key, base)).encode())


def _run_stage(args):
    op, hw, template, cfg, resident, seeds, seed = args
    return search_op(op, hw, template, cfg, resident, seeds, seed)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SAMT_THREADS", "1")))
    except ValueError:
        return 1


class StageSolver:
    """Per-operator GA results shared across fusion codes.

    Stages are solved in order of growing resident sets; each GA is seeded
    with the winners found for the same operator under smaller resident
    sets, so adding residency can never make a stage look worse.
    ``incumbents`` (stage key -> genome, e.g. from a smaller-S2 run) are
    re-evaluated after each GA and kept when they beat its result.
    """

    def __init__(self, hw: HardwareConfig, template, cfg: GaConfig,
                 incumbents: dict | None = None):
        self.hw, self.template, self.cfg = hw, get_template(template), cfg
        self.results: dict[tuple, OpSearch] = {}
        self.incumbents = incumbents or {}

    def _seeds(self, op: BaseOp, key: tuple) -> list[Genome]:
        seeds = []
        if not self.template.fixed:
            for t in FIXED_TEMPLATES:
                try:
                    seeds.append(default_genome(t, op.dims, self.hw, op.bytes_per_element))
                except CapacityError:
                    pass
        for other, res in sorted(self.results.items(), key=lambda kv: repr(kv[0])):
            if other[:-1] == key[:-1] and other[-1] < key[-1] and res.genome is not None:
                seeds.append(res.genome)
        return seeds

    def _challenge(self, key: tuple, op: BaseOp, resident: frozenset, res: OpSearch) -> OpSearch:
        g = self.incumbents.get(key)
        if g is None or res.genome is None or not _valid(g, op, self.hw, self.template):
            return res
        fit = _Fitness(op, self.hw, self.template, resident, self.cfg.objectives)
        k = fit.key(g)
        if k >= fit.key(res.genome):
            return res
        trace = [row if (row.best_latency, row.best_energy) <= k[:2]
                 else TraceRow(row.generation, *k[:2]) for row in res.trace]
        return OpSearch(g, fit.reports[g], trace, res.evaluated)

    @property
    def genomes(self) -> dict[tuple, Genome]:
        return {k: r.genome for k, r in self.results.items() if r.genome is not None}

    def solve(self, stages: Iterable[tuple[BaseOp, frozenset]]) -> None:
        todo: dict[tuple, tuple[BaseOp, frozenset]] = {}
        for op, resident in stages:
            key = _stage_key(op, resident)
            if key not in self.results:
                todo.setdefault(key, (op, resident))
        for size in sorted({len(k[-1]) for k in todo}):
            wave = sorted((k for k in todo if len(k[-1]) == size), key=repr)
            jobs = [(todo[k][0], self.hw, self.template, self.cfg, todo[k][1],
                     self._seeds(todo[k][0], k), _stage_seed(k, self.cfg.seed)) for k in wave]
            workers = min(_threads(), len(jobs))
            if workers > 1:
                with ProcessPoolExecutor(workers) as pool:
                    outs = list(pool.map(_run_stage, jobs))
            else:
                outs = [_run_stage(j) for j in jobs]
            for k, out in zip(wave, outs):
                self.results[k] = self._challenge(k, todo[k][0], todo[k][1], out)

    def get(self, op: BaseOp, resident: frozenset) -> OpSearch:
        return self.results[_stage_key(op, resident)]


def _layer_stages(code: FusionCode, dims: ModelDims) -> list[tuple[str, BaseOp, frozenset]]:
    """(stage name, op, resident tensor names) in layer order."""
    dec = decode(code, dims)
    layer = build_layer(dims)
    out = []
    for op in layer:
        chain = dec.chain_of(op.id)
        if chain is None:
            out.append((op.id, op, frozenset()))
        else:
            ops = [o for o in layer if o.id in chain.base_ops]
            out.append((chain.name, op, chain_resident_sets(ops, chain.internal_names)[op.id]))
    return out


def _assemble(code: FusionCode, dims: ModelDims, solver: StageSolver):
    stages = _layer_stages(code, dims)
    genomes: dict[str, Genome] = {}
    reports: dict[str, list[CostReport]] = {}
    traces = []
    for name, op, resident in stages:
        res = solver.get(op, resident)
        if res.genome is not None:
            genomes[op.id] = res.genome
        reports.setdefault(name, []).append(res.report)
        traces.append(res.trace)
    P = solver.hw.P
    stage_reports = {n: CostReport.combine(rs, P) for n, rs in reports.items()}
    total = CostReport.combine(stage_reports.values(), P)
    trace = [TraceRow(i, sum(t[i].best_latency for t in traces), sum(t[i].best_energy for t in traces))
             for i in range(len(traces[0]))]
    return genomes, stage_reports, total, trace


def _as_dims(target) -> ModelDims | None:
    return target if isinstance(target, ModelDims) else None


def ga_search(target, hw: HardwareConfig, template="Flexible", code="000000",
              cfg: GaConfig = GaConfig(), solver: StageSolver | None = None) -> SearchResult:
    """GA for one fusion code over a layer (``ModelDims``), or a single GEMM
    given as a ``BaseOp`` or an ``(M, N, K)`` triple."""
    template = get_template(template)
    dims = _as_dims(target)
    if dims is None:
        op = _as_op(target)
        res = search_op(op, hw, template, cfg)
        return SearchResult(str(FusionCode.parse(code)), template.name, {op.id: res.genome},
                            res.report, {op.id: res.report},
                            [ParetoPoint(res.report.latency_cycles, res.report.energy_units,
                                         s2_footprint(res.genome, op.dims, hw, op.bytes_per_element),
                                         str(code), template.name, {op.id: res.genome})],
                            res.trace, [str(code)])
    code = FusionCode.parse(code)
    ok, bad = feasible(code, dims, hw)
    if not ok:
        raise FeasibilityError(f"fusion code {code} infeasible: {bad.name} needs "
                               f"{bad.s2_working_set} B of S2")
    solver = solver or StageSolver(hw, template, cfg)
    solver.solve((op, res) for _, op, res in _layer_stages(code, dims))
    genomes, stages, total, trace = _assemble(code, dims, solver)
    need = max((c.s2_working_set for c in decode(code, dims).chains), default=0)
    point = ParetoPoint(total.latency_cycles, total.energy_units, need, str(code), template.name, genomes)
    return SearchResult(str(code), template.name, genomes, total, stages, [point], trace, [str(code)])


DATAFLOW_MODES = ("flexible", "fixed", "both")


def dataflow_candidates(template, mode: str = "flexible") -> list[AcceleratorTemplate]:
    """Dataflow styles to search.  A fixed template offers only its own style;
    Flexible offers per-operator mappings ("flexible"), every fixed style
    shared across operators ("fixed"), or both."""
    template = get_template(template)
    if mode not in DATAFLOW_MODES:
        raise ValueError(f"dataflow mode must be one of {DATAFLOW_MODES}, got {mode!r}")
    if template.fixed:
        return [template]
    if mode == "flexible":
        return [template]
    if mode == "fixed":
        return list(FIXED_TEMPLATES)
    return [template] + list(FIXED_TEMPLATES)


def full_search(dims: ModelDims, hw: HardwareConfig, template="Flexible", cfg: GaConfig = GaConfig(),
                codes: Iterable | None = None, mode: str = "flexible",
                warm_start: dict | None = None) -> SearchResult:
    """Search every feasible fusion code and dataflow candidate; return the
    selected configuration and the Pareto front over all of them.

    ``warm_start`` is a previous result's ``stage_genomes`` (keyed per
    dataflow candidate); those genomes compete with the new GA winners.
    """
    codes = [FusionCode.parse(c) for c in (codes if codes is not None else all_codes())]
    feasible_codes = [c for c in codes if feasible(c, dims, hw)[0]]
    if not feasible_codes:
        raise FeasibilityError("no fusion code fits S2")
    points: list[ParetoPoint] = []
    details = {}
    stage_genomes = {}
    for cand in dataflow_candidates(template, mode):
        solver = StageSolver(hw, cand, cfg, (warm_start or {}).get(cand.name))
        solver.solve((op, res) for c in feasible_codes for _, op, res in _layer_stages(c, dims))
        for c in feasible_codes:
            genomes, stages, total, trace = _assemble(c, dims, solver)
            need = max((ch.s2_working_set for ch in decode(c, dims).chains), default=0)
            p = ParetoPoint(total.latency_cycles, total.energy_units, need, str(c), cand.name, genomes)
            points.append(p)
            details[(str(c), cand.name)] = (genomes, stages, total, trace)
        stage_genomes[cand.name] = solver.genomes
    best = _select(points)
    genomes, stages, total, trace = details[(best.code, best.template)]
    return SearchResult(best.code, best.template, genomes, total, stages, pareto_front(points),
                        trace, [str(c) for c in feasible_codes], stage_genomes)
