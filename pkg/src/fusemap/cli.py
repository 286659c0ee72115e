"""Command-line front end: analyze, enumerate-fusions, cost, search, sweep.

Exit codes: 0 success, 2 validation error, 3 infeasible, 4 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .costmodel import FeasibilityError, evaluate_layer, evaluate_op
from .fusion import FusionCode, enumerate_codes
from .hardware import PLATFORMS, HardwareConfig
from .mapping import (TEMPLATES, CapacityError, Genome, MappingError, format_genome_set,
                      parse_genome_set)
from .search import DATAFLOW_MODES, OBJECTIVES, GaConfig, SearchResult, full_search
from .workload import DimensionError, ModelDims, build_layer, gemm_op, intensity_table, mops_share

EXIT_OK, EXIT_VALIDATION, EXIT_FEASIBILITY, EXIT_IO = 0, 2, 3, 4

_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_RATE = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d", "l"],
            "properties": {
                "d": _POS_INT, "l": _POS_INT, "n_h": _POS_INT, "d_ffn": _POS_INT,
                "mode": {"enum": ["prefill", "decode"]},
                "kv_len": {"type": ["integer", "null"], "minimum": 1},
                "bytes_per_element": _POS_INT,
                "softmax_flops_per_element": {"type": "integer", "minimum": 0},
                "gelu_flops_per_element": {"type": "integer", "minimum": 0},
                "seq_lens": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
        },
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["M", "N", "K"],
            "properties": {"M": _POS_INT, "N": _POS_INT, "K": _POS_INT, "batch": _POS_INT},
        },
        "hardware": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(PLATFORMS)},
                "pe_count": _POS_INT,
                "s1_bytes": _POS_INT,
                "s2_bytes": _POS_INT,
                "bw_noc_bytes_per_sec": _POS_NUM,
                "bw_offchip_bytes_per_sec": _POS_NUM,
                "clock_hz": _POS_NUM,
                "energy": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _POS_NUM for k in ("e_mac", "e_s1", "e_s2", "e_s3")},
                },
            },
        },
        "template": {"enum": sorted(TEMPLATES)},
        "dataflow_mode": {"enum": list(DATAFLOW_MODES)},
        "ga": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population_size": {"type": "integer", "minimum": 2},
                "generations": _POS_INT,
                "crossover_rate": _RATE,
                "mutation_rate": _RATE,
                "reorder_rate": _RATE,
                "elite_fraction": _RATE,
                "fitness_threshold": {"type": ["number", "null"]},
                "seed": {"type": "integer"},
                "objectives": {"type": "array", "items": {"enum": sorted(OBJECTIVES)},
                               "minItems": 2, "maxItems": 2, "uniqueItems": True},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["parameter", "values"],
            "properties": {
                "parameter": {"type": "string", "pattern": r"^(template|dataflow_mode|[a-z]+\.[a-z0-9_]+)$"},
                "values": {"type": "array", "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "format": {"enum": ["csv", "json"]},
            },
        },
    },
}

_HW_KEYS = {"pe_count": "P", "s1_bytes": "S1", "s2_bytes": "S2",
            "bw_noc_bytes_per_sec": "bw_noc", "bw_offchip_bytes_per_sec": "bw_offchip",
            "clock_hz": "clock_hz"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: ModelDims
    hardware: HardwareConfig
    template: str = "Flexible"
    dataflow_mode: str = "flexible"
    ga: GaConfig = field(default_factory=GaConfig)
    seq_lens: list[int] | None = None
    operator: dict | None = None
    sweep: dict | None = None
    output_dir: str = "out"
    output_format: str = "csv"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            lines = [f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                     for e in errors]
            raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
        m = raw["model"]
        try:
            model = ModelDims(d=m["d"], l=m["l"], n_h=m.get("n_h", 1), d_ffn=m.get("d_ffn"),
                              bytes_per_element=m.get("bytes_per_element", 1),
                              mode=m.get("mode", "prefill"), kv_len=m.get("kv_len"),
                              softmax_flops=m.get("softmax_flops_per_element", 5),
                              gelu_flops=m.get("gelu_flops_per_element", 8))
        except DimensionError as exc:
            raise ConfigError(f"model: {exc}") from None
        h = raw.get("hardware", {})
        base = asdict(PLATFORMS[h.get("preset", "edge")])
        for key, attr in _HW_KEYS.items():
            if key in h:
                base[attr] = h[key]
        base.update(h.get("energy", {}))
        hw = HardwareConfig(**base)
        try:
            ga = GaConfig(**{k: (tuple(v) if k == "objectives" else v)
                             for k, v in raw.get("ga", {}).items()})
        except ValueError as exc:
            raise ConfigError(f"ga: {exc}") from None
        out = raw.get("output", {})
        return cls(model, hw, raw.get("template", "Flexible"), raw.get("dataflow_mode", "flexible"),
                   ga, m.get("seq_lens"), raw.get("operator"), raw.get("sweep"),
                   out.get("dir", "out"), out.get("format", "csv"))

    def to_dict(self) -> dict:
        m = self.model
        model = {"d": m.d, "l": m.l, "n_h": m.n_h, "d_ffn": m.d_ffn, "mode": m.mode,
                 "kv_len": m.kv_len, "bytes_per_element": m.bytes_per_element,
                 "softmax_flops_per_element": m.softmax_flops,
                 "gelu_flops_per_element": m.gelu_flops}
        if self.seq_lens:
            model["seq_lens"] = list(self.seq_lens)
        hw = self.hardware
        out = {
            "model": model,
            "hardware": {**{k: getattr(hw, a) for k, a in _HW_KEYS.items()},
                         "energy": {k: getattr(hw, k) for k in ("e_mac", "e_s1", "e_s2", "e_s3")}},
            "template": self.template,
            "dataflow_mode": self.dataflow_mode,
            "ga": {**asdict(self.ga), "objectives": list(self.ga.objectives)},
            "output": {"dir": self.output_dir, "format": self.output_format},
        }
        if self.operator:
            out["operator"] = dict(self.operator)
        if self.sweep:
            out["sweep"] = copy.deepcopy(self.sweep)
        return out


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------- output


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(header, rows, fmt: str, out: Path | None, name: str) -> None:
    if fmt == "json":
        text = json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n"
        name = name.rsplit(".", 1)[0] + ".json"
    else:
        text = _csv_text(header, rows)
    if out is None:
        sys.stdout.write(text)
    else:
        _atomic_write(out / name, text)


# ---------------------------------------------------------------- commands


def cmd_analyze(cfg: ExperimentConfig, out: Path | None, fmt: str) -> int:
    rows = []
    for r in intensity_table(cfg.model, cfg.seq_lens):
        share = mops_share(cfg.model.with_seq_len(r.l)) if r.op == "layer" else ""
        rows.append([r.l, r.op, r.flops, r.mops, round(r.intensity, 6),
                     round(share, 6) if share != "" else ""])
    _emit(["l", "op", "flops", "mops", "intensity", "attention_mops_share"], rows, fmt, out,
          "analyze.csv")
    return EXIT_OK


def cmd_enumerate_fusions(cfg: ExperimentConfig, out: Path | None, fmt: str) -> int:
    rows = [[r.code.bits, "+".join(r.chains), r.memory_reduced, r.s2_required, int(r.feasible)]
            for r in enumerate_codes(cfg.model, cfg.hardware)]
    _emit(["code", "chains", "memory_reduced", "s2_required", "feasible"], rows, fmt, out,
          "fusions.csv")
    return EXIT_OK


def cmd_cost(cfg: ExperimentConfig, genome_path: str, code: str, out: Path | None) -> int:
    genomes = parse_genome_set(Path(genome_path).read_text())
    if cfg.operator:
        op = gemm_op(cfg.operator["M"], cfg.operator["N"], cfg.operator["K"],
                     cfg.operator.get("batch", 1), cfg.model.bytes_per_element)
        g = genomes if isinstance(genomes, Genome) else genomes.get(op.id)
        report = evaluate_op(g, op, cfg.hardware, cfg.template)
        payload = {"operator": cfg.operator, "report": report.as_dict()}
    else:
        if isinstance(genomes, Genome):
            genomes = {op.id: genomes for op in build_layer(cfg.model) if op.is_gemm}
        layer = evaluate_layer(code, genomes, cfg.model, cfg.hardware, cfg.template)
        payload = {"fusion_code": str(layer.code), "report": layer.total.as_dict(),
                   "stages": {k: v.as_dict() for k, v in layer.stages.items()}}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        _atomic_write(out / "cost.json", text)
    return EXIT_OK


def _write_search(result: SearchResult, out: Path, fmt: str) -> None:
    rows = []
    for p in result.pareto:
        ref = f"genomes/{p.code}_{p.template}.txt"
        _atomic_write(out / ref, format_genome_set(p.genomes))
        rows.append([p.latency, p.energy, p.s2_needed, p.code, ref])
    _emit(["latency_cycles", "energy_units", "s2_bytes_needed", "fusion_code", "genome_ref"],
          rows, fmt, out, "pareto.csv")
    best = {
        "fusion_code": result.code,
        "template": result.template,
        "genomes": {k: g.to_text() for k, g in sorted(result.genomes.items())},
        "report": result.report.as_dict(),
        "stages": {k: v.as_dict() for k, v in result.stages.items()},
        "feasible_codes": result.feasible_codes,
    }
    _atomic_write(out / "best.json", json.dumps(best, indent=2, sort_keys=True) + "\n")
    _emit(["generation", "best_latency", "best_energy"],
          [[t.generation, t.best_latency, t.best_energy] for t in result.trace], fmt, out, "trace.csv")


def _search(cfg: ExperimentConfig, warm=None) -> SearchResult:
    return full_search(cfg.model, cfg.hardware, cfg.template, cfg.ga, mode=cfg.dataflow_mode,
                       warm_start=warm)


def cmd_search(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    _write_search(_search(cfg), out, fmt)
    return EXIT_OK


def _apply(raw: dict, parameter: str, value) -> dict:
    raw = copy.deepcopy(raw)
    if "." in parameter:
        section, key = parameter.split(".", 1)
        if section == "hardware":
            raw.setdefault("hardware", {})
            if key in _HW_KEYS.values():      # allow the short names too
                key = {v: k for k, v in _HW_KEYS.items()}[key]
            if key in ("e_mac", "e_s1", "e_s2", "e_s3"):
                raw["hardware"].setdefault("energy", {})[key] = value
                return raw
        raw.setdefault(section, {})[key] = value
    else:
        raw[parameter] = value
    raw.pop("sweep", None)
    return raw


def cmd_sweep(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    if not cfg.sweep:
        raise ConfigError("sweep section missing")
    param, values = cfg.sweep["parameter"], cfg.sweep["values"]
    base = cfg.to_dict()
    rows = []
    warm = None
    for value in values:
        label = f"{param}={value}"
        try:
            run = ExperimentConfig.from_dict(_apply(base, param, value))
            result = _search(run, warm)
            warm = result.stage_genomes
            _write_search(result, out / label, fmt)
            r = result.report
            rows.append([value, result.code, result.template, r.latency_cycles, r.energy_units,
                         len(result.feasible_codes), "ok"])
        except (ConfigError, MappingError, FeasibilityError, CapacityError, ValueError) as exc:
            rows.append([value, "", "", "", "", "", f"error: {exc}".replace("\n", " ")])
    _emit([param, "best_code", "dataflow", "latency_cycles", "energy_units", "feasible_codes",
           "status"], rows, fmt, out, "sweep.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fusemap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("analyze", "enumerate-fusions", "cost", "search", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override ga.seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), help="table format")
        if name == "cost":
            p.add_argument("--genome", required=True, help="genome text file")
            p.add_argument("--code", default="000000", help="fusion code bits")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.ga = GaConfig(**{**asdict(cfg.ga), "seed": args.seed})
        fmt = args.format or cfg.output_format
        out = Path(args.out) if args.out else None
        if args.command == "analyze":
            return cmd_analyze(cfg, out, fmt)
        if args.command == "enumerate-fusions":
            return cmd_enumerate_fusions(cfg, out, fmt)
        if args.command == "cost":
            FusionCode.parse(args.code)
            return cmd_cost(cfg, args.genome, args.code, out)
        out = out or Path(cfg.output_dir)
        if args.command == "search":
            return cmd_search(cfg, out, fmt)
        return cmd_sweep(cfg, out, fmt)
    except MappingError as exc:
        print("invalid genome:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FeasibilityError, CapacityError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FEASIBILITY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
