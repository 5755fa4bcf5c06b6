"""Context-sensitive node embeddings via mutual attention over sampled
neighborhoods, plus a link-prediction / clustering evaluation harness."""

from .graph import (
    EvalSplit,
    Graph,
    NegativeSampler,
    NeighborhoodSample,
    ParseError,
    ValidationError,
    barabasi_albert,
    build_negative_sampler,
    build_train_graph,
    from_edges,
    parse_edge_list,
    parse_labels,
    sample_neighborhood,
    serialize_edge_list,
    split_edges,
)
from .model import (
    BlockOutput,
    DivergenceError,
    GlobalEmbedding,
    TrainConfig,
    TrainResult,
    backward,
    edge_loss_and_grads,
    exact_softmax_loss,
    forward,
    init_embedding,
    load_checkpoint,
    nce_loss,
    save_checkpoint,
    score_pair,
    score_pairs,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "EvalSplit", "Graph", "NegativeSampler", "NeighborhoodSample",
    "ParseError", "ValidationError", "barabasi_albert",
    "build_negative_sampler", "build_train_graph", "from_edges",
    "parse_edge_list", "parse_labels", "sample_neighborhood",
    "serialize_edge_list", "split_edges",
    "BlockOutput", "DivergenceError", "GlobalEmbedding", "TrainConfig",
    "TrainResult", "backward", "edge_loss_and_grads", "exact_softmax_loss",
    "forward", "init_embedding", "load_checkpoint", "nce_loss",
    "save_checkpoint", "score_pair", "score_pairs", "train",
    "__version__",
]
