"""State space layers that scan along a minimum spanning tree of their inputs.

Pipeline: ``graph_build`` offers candidate node pairs weighted by cosine
dissimilarity, ``mst`` keeps a minimum spanning tree, ``tree_scan``
propagates states over it and ``ssm_layer`` wraps the scan into a
selective layer with an analytic backward pass.
"""

from . import _backend
from .errors import (ContractViolation, EmptyStructure, GGSSMError, GraphDisconnected,
                     InvalidConfig, InvalidInput, InvariantViolation, OracleSizeError,
                     TrainingDiverged)
from .graph_build import (EdgeList, FeatureSet, Topology, WeightedEdge, build_candidate_edges,
                          cosine_dissimilarity, weigh_edges)
from .mst import (ALGORITHMS, RootedTree, SpanningTree, UnionFind, chain_tree, make_soft_heap,
                  minimum_spanning_tree, mst_boruvka_soft, mst_bruteforce, mst_kruskal, mst_prim,
                  root_tree, soft_heap_extract_min, soft_heap_insert)
from .ssm_layer import (LayerConfig, LayerWeights, compute_selective_params, discretize,
                        layer_backward, layer_forward, layer_forward_trace, output_head,
                        rms_normalize, sequential_scan_1d)
from .tree_scan import (GradientBundle, ScanParams, path_weight, scan_dense_oracle, scan_full,
                        scan_full_backward, scan_rooted, scan_rooted_backward)

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel backend, ``compiled`` or ``python``."""
    return _backend.name()


__all__ = [
    "ALGORITHMS", "ContractViolation", "EdgeList", "EmptyStructure", "FeatureSet", "GGSSMError",
    "GradientBundle", "GraphDisconnected", "InvalidConfig", "InvalidInput", "InvariantViolation",
    "LayerConfig", "LayerWeights", "OracleSizeError", "RootedTree", "ScanParams", "SpanningTree",
    "Topology", "TrainingDiverged", "UnionFind", "WeightedEdge", "backend",
    "build_candidate_edges", "chain_tree", "compute_selective_params", "cosine_dissimilarity",
    "discretize", "layer_backward", "layer_forward", "layer_forward_trace", "make_soft_heap",
    "minimum_spanning_tree", "mst_boruvka_soft", "mst_bruteforce", "mst_kruskal", "mst_prim",
    "output_head", "path_weight", "rms_normalize", "root_tree", "scan_dense_oracle", "scan_full",
    "scan_full_backward", "scan_rooted", "scan_rooted_backward", "sequential_scan_1d",
    "soft_heap_extract_min", "soft_heap_insert", "weigh_edges",
]
