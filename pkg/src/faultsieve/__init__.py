"""Hierarchical, coverage-pruned, LLM-screened method-level fault localization."""

from faultsieve.corpus import MethodDocument, MethodKey, extract_methods, method_key
from faultsieve.coverage import CoverageReport, branch_ratio, lookup_rho, parse_coverage
from faultsieve.embedding import HashingEmbedder, VectorIndex, cosine_similarity
from faultsieve.evaluation import paired_compare, reciprocal_rank, topk_hit
from faultsieve.pipeline import PipelineConfig, RunRecord, run_bug

__version__ = "0.1.0"

__all__ = [
    "CoverageReport",
    "HashingEmbedder",
    "MethodDocument",
    "MethodKey",
    "PipelineConfig",
    "RunRecord",
    "VectorIndex",
    "branch_ratio",
    "cosine_similarity",
    "extract_methods",
    "lookup_rho",
    "method_key",
    "paired_compare",
    "parse_coverage",
    "reciprocal_rank",
    "run_bug",
    "topk_hit",
]
