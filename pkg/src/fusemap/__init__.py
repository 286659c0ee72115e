"""Operator fusion and dataflow mapping exploration for Transformer layers."""
from .costmodel import (CostReport, DegenerateMappingError, FeasibilityError, LayerReport,
                        evaluate_chain, evaluate_gemm, evaluate_layer, evaluate_op,
                        refetch_free_genome)
from .fusion import (FusedChain, FusionCode, all_codes, chain_memory_reduced, decode, encode,
                     enumerate_codes, feasible, primitive_footprints)
from .hardware import CLOUD, EDGE, MOBILE, PLATFORMS, HardwareConfig
from .mapping import (TEMPLATES, AcceleratorTemplate, Directive, Genome, Level, MappingError,
                      count_mapping_space, default_genome, parse_genome, random_genome, validate)
from .search import (GaConfig, SearchResult, StageSolver, exhaustive_oracle, full_search,
                     ga_search, pareto_front, search_op)
from .workload import (BaseOp, ModelDims, arithmetic_intensity, build_layer, gemm_op,
                       intensity_table)

__version__ = "0.1.0"
