"""Graph convolutions over structurally partitioned neighborhoods (k-GCN)."""

__version__ = "0.1.0"

from .aggregation import aggregate, aggregate_backward
from .graph import (
    Dataset,
    Graph,
    Subgraph,
    build_graph,
    closed_neighborhood,
    grid_graph,
    induced_subgraph,
    load_dataset,
    normalized_adjacency,
)
from .model import LayerParams, ModelConfig, gradient_check, init_params, network_forward
from .partition import Partition, PartitionSet, kmeans_1d, partition_all, structural_partition
from .training import TrainConfig, TrainReport, evaluate, train
