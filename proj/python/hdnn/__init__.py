"""Small-footprint highway DNN toolkit: networks, losses, sMBR and a synthetic corpus."""

from ._hdnn import (
    HdnnError,
    Lattice,
    LatticeArc,
    Network,
    build_lattice,
    build_network,
    ce_loss,
    count_gate_params,
    count_params,
    distill,
    forward_backward,
    gen_corpus,
    hybrid_loss,
    kd_loss,
    load_model,
    smbr_objective,
    splice,
    train_ce,
)

__all__ = [
    "HdnnError",
    "Lattice",
    "LatticeArc",
    "Network",
    "build_lattice",
    "build_network",
    "ce_loss",
    "count_gate_params",
    "count_params",
    "distill",
    "forward_backward",
    "gen_corpus",
    "hybrid_loss",
    "kd_loss",
    "load_model",
    "smbr_objective",
    "splice",
    "train_ce",
]
