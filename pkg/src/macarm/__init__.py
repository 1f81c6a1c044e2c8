"""Mask-tuned arbitrary conditional models over discrete variables."""

from .distributions import (
    CardMaskDistribution,
    EdgeTable,
    ProbTable,
    TableMaskDistribution,
    baseline_edge_sampler,
    entropy,
    expected_cardinality,
    induced_edge_exact,
    induced_node_mc,
    induced_node_table,
    pmf_card_mask,
    reweight_cardinality,
    sample_induced_nodes,
    sample_reweighted_batch,
    sample_test_masks,
    sample_train_masks,
    tv_distance,
)
from .engine import (
    Objective,
    TrainConfig,
    complete,
    eval_joint,
    eval_joint_elbo,
    eval_marginal,
    eval_marginal_batch,
    train,
)
from .estimator import MACEstimator
from .lattice import Edge, LatticeSpec, Mask, cardinality, make_mask, max_element, prefix, sorted_elements
from .model import (
    JointOracle,
    JointTable,
    MixtureOracle,
    NetworkModel,
    NetworkParams,
    TabularModel,
    encode_input,
    init_network,
    loss_and_grad,
    oracle_from_joint,
)
from .protocols import W_MAC, W_RND, MACProtocol, Path, Protocol, RandomProtocol, choose, make_rng, path_sources, simulate_path

__version__ = "0.1.0"
