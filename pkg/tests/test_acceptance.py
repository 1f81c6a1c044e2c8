"""Acceptance gate: one test per criterion, each recording a pass/fail line."""

import math
import time

import numpy as np
import pytest

from macarm.distributions import (
    CardMaskDistribution,
    empirical_table,
    entropy,
    induced_edge_exact,
    induced_node_exact,
    induced_node_mc,
    reweight_cardinality,
    sample_reweighted_batch,
    sample_train_masks,
    tv_distance,
)
from macarm.engine import (
    Objective,
    eval_joint_batch,
    eval_joint_elbo,
    eval_marginal_batch,
    sample_training_masks,
)
from macarm.harness import AblationConfig, Dataset, marginal_nll_suite, run_ablation
from macarm.lattice import Edge, LatticeSpec, Mask, bool_to_codes, make_mask
from macarm.model import JointOracle, JointTable, init_network, loss_and_grad
from macarm.protocols import W_MAC, W_RND, make_rng

from conftest import random_joint, record_acceptance


def _oracle_pairs(seed=2024, n_pairs=1000):
    spec = LatticeSpec(8, 2)
    rng = make_rng(seed)
    joint = random_joint(spec, rng)
    X = rng.integers(2, size=(n_pairs, 8))
    masks = rng.random((n_pairs, 8)) < rng.random((n_pairs, 1))
    return spec, joint, X, masks


def _brute_log_marginals(joint, X, masks):
    out = []
    for x, m in zip(X, masks):
        e = Mask(int(bool_to_codes(m[None])[0]), len(x))
        out.append(math.log(joint.marginal(x, e)))
    return np.array(out)


def test_criterion_1_oracle_exactness():
    spec, joint, X, masks = _oracle_pairs()
    oracle = JointOracle(joint)
    brute = _brute_log_marginals(joint, X, masks)
    start = time.perf_counter()
    err_mac = np.abs(eval_marginal_batch(oracle, X, masks, W_MAC) - brute).max()
    err_rnd = np.abs(eval_marginal_batch(oracle, X, masks, W_RND, make_rng(1)) - brute).max()
    elapsed = time.perf_counter() - start
    ok = err_mac < 1e-9 and err_rnd < 1e-9 and elapsed < 10
    assert record_acceptance(1, "oracle exactness", ok,
                             f"max err mac {err_mac:.2e}, rnd {err_rnd:.2e} (< 1e-9); {elapsed:.2f}s (< 10s)")


def test_criterion_2_protocol_independence():
    spec, joint, X, masks = _oracle_pairs()
    oracle = JointOracle(joint)
    gap = np.abs(eval_marginal_batch(oracle, X, masks, W_MAC)
                 - eval_marginal_batch(oracle, X, masks, W_RND, make_rng(2))).max()
    rng = make_rng(3)
    elbo_gap = 0.0
    joint_ll = eval_joint_batch(oracle, X[:100], W_MAC)
    for x, ll in zip(X[:100], joint_ll):
        elbo_gap = max(elbo_gap, abs(eval_joint_elbo(oracle, x, 16, rng) - ll))
    ok = gap < 1e-9 and elbo_gap < 1e-9
    assert record_acceptance(2, "protocol independence / no ELBO gap", ok,
                             f"|mac - rnd| {gap:.2e}, |elbo16 - joint| {elbo_gap:.2e} (< 1e-9)")


def test_criterion_3_sampler_matches_dp():
    spec = LatticeSpec(10)
    M = CardMaskDistribution(spec)
    start = time.perf_counter()
    exact_mac = induced_node_exact(M, W_MAC, spec)
    exact_rnd = induced_node_exact(M, W_RND, spec)
    tv_sampler = tv_distance(empirical_table(sample_train_masks(1_000_000, spec, make_rng(4)), spec), exact_mac)
    tv_mc_mac = tv_distance(induced_node_mc(M, W_MAC, spec, 1_000_000, make_rng(5)), exact_mac)
    tv_mc_rnd = tv_distance(induced_node_mc(M, W_RND, spec, 1_000_000, make_rng(6)), exact_rnd)
    elapsed = time.perf_counter() - start
    ok = max(tv_sampler, tv_mc_mac, tv_mc_rnd) < 0.01 and elapsed < 30
    assert record_acceptance(3, "sampler-DP equivalence", ok,
                             f"TV sampler {tv_sampler:.4f}, mc/mac {tv_mc_mac:.4f}, mc/rnd {tv_mc_rnd:.4f} "
                             f"(< 0.01); {elapsed:.1f}s (< 30s)")


def test_criterion_4_hand_enumerated_n2():
    spec = LatticeSpec(2)
    M = CardMaskDistribution(spec)
    E, M0 = make_mask([], spec), make_mask([0], spec)
    edges = induced_edge_exact(M, W_MAC, spec).as_dict()
    want_edges = {Edge(0, E): 1 / 2, Edge(1, E): 1 / 6, Edge(1, M0): 1 / 3}
    node = induced_node_exact(M, W_MAC, spec)
    cr = reweight_cardinality(node)
    h_mac, h_rnd = entropy(node), entropy(induced_node_exact(M, W_RND, spec))
    errs = [
        max(abs(edges.get(k, 0) - v) for k, v in want_edges.items()),
        float(len(set(edges) - set(want_edges))),
        abs(node[E] - 2 / 3) + abs(node[M0] - 1 / 3),
        abs(cr[E] - 1 / 2) + abs(cr[M0] - 1 / 2),
        abs(h_mac - (2 / 3 * math.log(3 / 2) + 1 / 3 * math.log(3))),
        abs(h_rnd - (2 / 3 * math.log(3 / 2) + 2 / 6 * math.log(6))),
    ]
    ok = max(errs) < 1e-9 and round(h_mac, 6) == 0.636514 and round(h_rnd, 6) == 0.867563
    assert record_acceptance(4, "hand-enumerated N=2 tables", ok,
                             f"max deviation {max(errs):.1e} (< 1e-9); H mac {h_mac:.6f}, rnd {h_rnd:.6f}")


def test_criterion_5_entropy_ordering_n12():
    spec = LatticeSpec(12)
    M = CardMaskDistribution(spec)
    start = time.perf_counter()
    h_mac = entropy(induced_node_exact(M, W_MAC, spec))
    h_rnd = entropy(induced_node_exact(M, W_RND, spec))
    elapsed = time.perf_counter() - start
    ok = h_mac < h_rnd and elapsed < 5
    assert record_acceptance(5, "entropy ordering N=12", ok,
                             f"H mac {h_mac:.6f} < H rnd {h_rnd:.6f}; {elapsed:.2f}s (< 5s)")


def test_criterion_6_gradient_check():
    rng = make_rng(6)
    start = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for _ in range(20):
        n, k = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        hidden = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(1, 3)))
        spec = LatticeSpec(n, k)
        params = init_network(spec, hidden, rng=rng, zero_output=False)
        for b in params.biases:
            b[:] = rng.normal(scale=0.5, size=b.shape)
        X = rng.integers(k, size=(5, n))
        masks = rng.random((5, n)) < 0.4
        masks[np.arange(5), rng.integers(n, size=5)] = False
        weights = rng.random(5) + 0.5
        _, grads = loss_and_grad(params, X, masks, weights)
        analytic = np.concatenate([g.ravel() for g in grads.values()])
        flat = params.flat()
        numeric = np.empty_like(flat)
        for i in range(len(flat)):
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (loss_and_grad(params.with_flat(up), X, masks, weights)[0]
                          - loss_and_grad(params.with_flat(down), X, masks, weights)[0]) / (2 * h)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        worst = max(worst, float((np.abs(analytic - numeric) / scale).max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    assert record_acceptance(6, "gradient check", ok,
                             f"max elementwise rel err {worst:.2e} (< 1e-4) over 20 configs; {elapsed:.1f}s (< 30s)")


def test_criterion_7_normalizer_safety():
    spec = LatticeSpec(12)
    full = {}
    full["train"] = int(sample_train_masks(1_000_000, spec, make_rng(7)).all(axis=1).sum())
    full["train-cr"] = sum(int(sample_reweighted_batch(10_000, spec, 100, make_rng([7, i])).all(axis=1).sum())
                           for i in range(100))
    for kind in Objective.KINDS:
        masks, _ = sample_training_masks(Objective.from_name(kind), 1_000_000, spec, make_rng(8), 1)
        full[kind] = int(masks.all(axis=1).sum())
    ok = not any(full.values())
    assert record_acceptance(7, "normalizer safety", ok,
                             "full masks in 10^6 draws: " + ", ".join(f"{k}={v}" for k, v in full.items()))


def test_criterion_8_closed_form_suite():
    spec = LatticeSpec(3)
    oracle = JointOracle(JointTable(spec, np.full(8, 1 / 8)))
    d = Dataset(spec, make_rng(9).integers(2, size=(100_000, 3)), oracle)
    nll = marginal_nll_suite(oracle, d, rng=make_rng(10)).nll
    target = 2 * math.log(2)
    ok = abs(nll - target) < 0.01
    assert record_acceptance(8, "closed-form suite value", ok,
                             f"NLL {nll:.5f} vs 2 ln 2 = {target:.5f} (|diff| {abs(nll - target):.5f} < 0.01)")


@pytest.mark.slow
def test_criterion_9_directional_ablation():
    cfg = AblationConfig()
    report = run_ablation(cfg)
    per_seed = report.per_seed()
    beats_nocr = sum(s["mac-cr"] <= s["mac-nocr"] for s in per_seed.values())
    beats_ardm = sum(s["mac-cr"] <= s["ardm"] for s in per_seed.values())
    means = report.mean_nll()
    summary = ", ".join(f"{k} {v:.5f}" for k, v in sorted(means.items(), key=lambda kv: kv[1]))
    for seed, row in sorted(per_seed.items()):
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.5f}" for k, v in row.items()))
    ok = (means["mac-cr"] <= means["mac-nocr"] and means["mac-cr"] <= means["ardm"]
          and beats_nocr >= 4 and beats_ardm >= 4)
    assert record_acceptance(9, "directional ablation", ok,
                             f"mac-cr <= mac-nocr in {beats_nocr}/5 seeds, <= ardm in {beats_ardm}/5; "
                             f"mean marginal NLL (nats): {summary}; oracle {report.oracle['marginal_nll_mac']:.5f}")
