"""Autoregressive generative models for sparse weighted graphs."""
from .adj_lstm import AdjLstm, AdjLstmConfig
from .datasets import er_baseline, fit_node_count, gen_er, gen_joint_tree, gen_lobster, gen_tree, stream_rng
from .fenwick import FenwickStateTree, blocks
from .graph import WeightedGraph, canonicalize, read_graphs, validate, write_graphs
from .metrics import evaluate, is_lobster, is_tree, mmd, statistic, weight_summary
from .model import BiggE, BiggEConfig, decode_row, encode_row
from .training import TrainConfig, Trainer, load_model, make_model, save_model

__version__ = "0.1.0"

__all__ = [
    "AdjLstm",
    "AdjLstmConfig",
    "BiggE",
    "BiggEConfig",
    "FenwickStateTree",
    "TrainConfig",
    "Trainer",
    "WeightedGraph",
    "blocks",
    "canonicalize",
    "decode_row",
    "encode_row",
    "er_baseline",
    "evaluate",
    "fit_node_count",
    "gen_er",
    "gen_joint_tree",
    "gen_lobster",
    "gen_tree",
    "is_lobster",
    "is_tree",
    "load_model",
    "make_model",
    "mmd",
    "read_graphs",
    "save_model",
    "statistic",
    "stream_rng",
    "validate",
    "weight_summary",
    "write_graphs",
]
