"""Univariate conditional models p(x_i | x_e).

Every model answers, for a batch of instances ``X`` (shape ``(B, N)``) and
masks (shape ``(B, N)``), a ``(B, N, K)`` array of log-probabilities; rows
for observed variables are produced but carry no meaning.

Shipped models:

* :class:`JointOracle` -- exact conditionals by summing a dense joint table.
* :class:`MixtureOracle` -- exact conditionals of a mixture of product
  distributions, without materialising the joint.
* :class:`NetworkModel` -- a weight-tied MLP over absorbing-state inputs.
* :class:`TabularModel` -- one free logit vector per (mask, observed values)
  slot; the infinite-capacity reference for training tests.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass
from pathlib import Path as _FsPath

import numpy as np
from scipy.special import log_softmax, logsumexp

from .exceptions import CapacityError, InvalidArgumentError, ParseError, ZeroEvidenceError
from .lattice import LatticeSpec, Mask
from .validation import check_instances, check_masks

#: Largest joint table (number of configurations) an oracle may hold.
JOINT_CAPACITY = 1 << 24
CHECKPOINT_VERSION = 1


def encode_input(X, masks, spec: LatticeSpec) -> np.ndarray:
    """Absorbing-state encoding.

    Each variable contributes ``K + 1`` features: its one-hot value (zeroed
    when unobserved) followed by a presence bit.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    masks = check_masks(masks, spec, X.shape[0])
    B, N, K = X.shape[0], spec.n_vars, spec.alphabet_size
    feats = np.zeros((B, N, K + 1))
    rows, cols = np.nonzero(masks)
    feats[rows, cols, X[rows, cols]] = 1.0
    feats[:, :, K] = masks
    return feats.reshape(B, N * (K + 1))


class ConditionalModel(abc.ABC):
    spec: LatticeSpec

    @abc.abstractmethod
    def log_predict_proba(self, X, masks) -> np.ndarray:
        """``(B, N, K)`` log-probabilities of every symbol of every variable."""

    def predict_proba(self, X, masks) -> np.ndarray:
        return np.exp(self.log_predict_proba(X, masks))

    def predict_all(self, x, e: Mask) -> dict[int, np.ndarray]:
        """Normalized K-vector for each unobserved variable."""
        probs = self.predict_proba(np.asarray(x)[None, :], e)[0]
        return {i: probs[i] for i in range(self.spec.n_vars) if i not in e}

    def log_conditional(self, x, j: int, e: Mask) -> float:
        if j in e:
            raise InvalidArgumentError(f"target {j} is already observed in {e!r}")
        x = np.asarray(x, dtype=np.int64)
        return float(self.log_predict_proba(x[None, :], e)[0, j, x[j]])

    def log_conditionals(self, X, masks, targets) -> np.ndarray:
        """Batched ``log p(x_t | x_e)`` for one target per row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        targets = np.asarray(targets, dtype=np.int64)
        rows = np.arange(X.shape[0])
        logp = self.log_predict_proba(X, masks)
        return logp[rows, targets, X[rows, targets]]


# ---------------------------------------------------------------------------
# exact oracles

@dataclass
class JointTable:
    """Dense joint pmf with shape ``(K,) * N``."""

    spec: LatticeSpec
    probs: np.ndarray

    def __post_init__(self):
        n, k = self.spec.n_vars, self.spec.alphabet_size
        if k ** n > JOINT_CAPACITY:
            raise CapacityError(f"joint table with {k}^{n} entries exceeds capacity {JOINT_CAPACITY}")
        probs = np.asarray(self.probs, dtype=float)
        if probs.size != k ** n:
            raise InvalidArgumentError(f"joint table needs {k ** n} entries, got {probs.size}")
        probs = probs.reshape((k,) * n)
        if np.any(probs < 0):
            raise InvalidArgumentError("joint probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"joint table sums to {probs.sum()!r}")
        self.probs = probs

    @classmethod
    def from_flat(cls, spec: LatticeSpec, flat) -> "JointTable":
        """``flat[c]`` is the probability of the configuration whose
        row-major digits (variable 0 first) spell ``c`` in base K."""
        return cls(spec, np.asarray(flat, dtype=float))

    def configurations(self) -> np.ndarray:
        n, k = self.spec.n_vars, self.spec.alphabet_size
        return np.indices((k,) * n).reshape(n, -1).T

    def marginal(self, x, e: Mask) -> float:
        """Brute-force ``p(x_e)``: sum over the unobserved variables."""
        x = np.asarray(x, dtype=np.int64)
        idx = tuple(int(x[v]) if v in e else slice(None) for v in range(self.spec.n_vars))
        return float(self.probs[idx].sum())

    def sample(self, n: int, rng) -> np.ndarray:
        flat = self.probs.ravel()
        codes = rng.choice(flat.size, size=n, p=flat / flat.sum())
        return np.stack(np.unravel_index(codes, self.probs.shape), axis=1).astype(np.int64)


class JointOracle(ConditionalModel):
    """Exact conditionals from a joint table by brute-force summation."""

    def __init__(self, joint: JointTable):
        self.joint = joint
        self.spec = joint.spec
        self._configs = joint.configurations()
        self._flat = joint.probs.ravel()

    def log_predict_proba(self, X, masks):
        X = check_instances(X, self.spec)
        masks = check_masks(masks, self.spec, X.shape[0])
        N, K = self.spec.n_vars, self.spec.alphabet_size
        out = np.zeros((X.shape[0], N, K))
        for b, (x, m) in enumerate(zip(X, masks)):
            consistent = np.all(self._configs[:, m] == x[m], axis=1)
            weights = self._flat * consistent
            evidence = weights.sum()
            if evidence <= 0:
                raise ZeroEvidenceError(f"observed values {x[m].tolist()} on {np.flatnonzero(m).tolist()} have probability 0")
            for i in range(N):
                out[b, i] = np.bincount(self._configs[:, i], weights=weights, minlength=K) / evidence
        with np.errstate(divide="ignore"):
            return np.log(out)


def oracle_from_joint(joint: JointTable) -> JointOracle:
    return JointOracle(joint)


class MixtureOracle(ConditionalModel):
    """Exact conditionals of ``sum_c w_c prod_v theta[c, v, x_v]``."""

    def __init__(self, spec: LatticeSpec, weights, component_probs):
        weights = np.asarray(weights, dtype=float)
        theta = np.asarray(component_probs, dtype=float)
        if theta.shape != (len(weights), spec.n_vars, spec.alphabet_size):
            raise InvalidArgumentError("component_probs must have shape (C, N, K)")
        if abs(weights.sum() - 1) > 1e-12 or np.any(weights < 0):
            raise InvalidArgumentError("mixture weights must be a probability vector")
        if np.any(theta < 0) or np.any(np.abs(theta.sum(axis=2) - 1) > 1e-12):
            raise InvalidArgumentError("each component factor must be a probability vector")
        self.spec = spec
        self.weights = weights
        self.theta = theta
        with np.errstate(divide="ignore"):
            self._log_w = np.log(weights)
            self._log_theta = np.log(theta)

    def log_marginal(self, X, masks) -> np.ndarray:
        X = check_instances(X, self.spec)
        masks = check_masks(masks, self.spec, X.shape[0])
        return logsumexp(self._component_scores(X, masks), axis=1)

    def _component_scores(self, X, masks):
        N = self.spec.n_vars
        # (B, C, N): log theta[c, v, x_v]
        picked = self._log_theta[:, np.arange(N)[None, :], X].transpose(1, 0, 2)
        picked = np.where(masks[:, None, :], picked, 0.0)
        return self._log_w[None, :] + picked.sum(axis=2)

    def log_predict_proba(self, X, masks):
        X = check_instances(X, self.spec)
        masks = check_masks(masks, self.spec, X.shape[0])
        scores = self._component_scores(X, masks)
        norm = logsumexp(scores, axis=1, keepdims=True)
        if np.any(~np.isfinite(norm)):
            raise ZeroEvidenceError("observed values have probability 0 under the mixture")
        post = np.exp(scores - norm)
        probs = np.einsum("bc,cnk->bnk", post, self.theta)
        # observed variables get a point mass on their value, as in JointOracle
        rows, cols = np.nonzero(masks)
        probs[rows, cols] = 0.0
        probs[rows, cols, X[rows, cols]] = 1.0
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def joint_table(self) -> JointTable:
        N, K = self.spec.n_vars, self.spec.alphabet_size
        if K ** N > JOINT_CAPACITY:
            raise CapacityError(f"joint table with {K}^{N} entries exceeds capacity {JOINT_CAPACITY}")
        probs = np.zeros((K,) * N)
        for w, th in zip(self.weights, self.theta):
            comp = np.array(w)
            for v in range(N):
                comp = np.multiply.outer(comp, th[v])
            probs += comp
        return JointTable(self.spec, probs)

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        cdf = np.cumsum(self.theta[comp], axis=2)
        u = rng.random((n, self.spec.n_vars, 1))
        return np.minimum((u * cdf[..., -1:] >= cdf).sum(axis=2), self.spec.alphabet_size - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# weight-tied network

@dataclass
class NetworkParams:
    """Weights of a fully connected tanh network.

    Layer ``l`` maps ``h`` to ``h @ weights[l] + biases[l]``; the output has
    ``N * K`` logits, reshaped to ``(N, K)`` blocks.
    """

    n_vars: int
    alphabet_size: int
    hidden_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None
    step: int = 0

    @property
    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.n_vars, self.alphabet_size)

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{l}"] = W
            out[f"b{l}"] = b
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.n_vars, self.alphabet_size, self.hidden_sizes,
            [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.seed, self.step,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.as_dict().values()])

    def with_flat(self, vec) -> "NetworkParams":
        out = self.copy()
        pos = 0
        for arr in out.as_dict().values():
            arr[...] = np.asarray(vec[pos: pos + arr.size]).reshape(arr.shape)
            pos += arr.size
        return out


def _layer_sizes(spec: LatticeSpec, hidden_sizes) -> list[int]:
    return [spec.n_vars * (spec.alphabet_size + 1), *hidden_sizes, spec.n_vars * spec.alphabet_size]


def init_network(spec: LatticeSpec, hidden_sizes, rng=None, seed: int | None = None,
                 zero_output: bool = True) -> NetworkParams:
    """Scaled-normal init: ``W ~ N(0, 1/fan_in)``, zero biases.

    With ``zero_output`` the final layer starts at zero so every initial
    prediction is uniform.
    """
    hidden_sizes = tuple(int(h) for h in hidden_sizes)
    if not hidden_sizes or any(h < 1 for h in hidden_sizes):
        raise InvalidArgumentError("need at least one hidden layer, each of size >= 1")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    sizes = _layer_sizes(spec, hidden_sizes)
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = l == len(sizes) - 2
        if last and zero_output:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return NetworkParams(spec.n_vars, spec.alphabet_size, hidden_sizes, weights, biases, seed)


def _forward(params: NetworkParams, feats: np.ndarray):
    acts = [feats]
    h = feats
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if l == last else np.tanh(z)
        acts.append(h)
    return acts


def network_logits(params: NetworkParams, X, masks) -> np.ndarray:
    spec = params.spec
    out = _forward(params, encode_input(X, masks, spec))[-1]
    return out.reshape(-1, spec.n_vars, spec.alphabet_size)


def _example_scale(masks: np.ndarray, objective_weights, n_vars: int) -> np.ndarray:
    n_missing = n_vars - masks.sum(axis=1)
    if np.any(n_missing == 0):
        raise InvalidArgumentError("a full mask has no missing variable to predict")
    w = np.ones(len(masks)) if objective_weights is None else np.asarray(objective_weights, dtype=float)
    return w / n_missing


def loss_and_grad(params: NetworkParams, X, masks, objective_weights=None):
    """Mean weighted per-missing-variable cross-entropy and its exact gradient.

    Example ``b`` contributes
    ``-w_b / (N - |e_b|) * sum_{i not in e_b} log p(x_i | x_e)``.
    Returns ``(loss, grads)`` with ``grads`` keyed like
    :meth:`NetworkParams.as_dict`.
    """
    spec = params.spec
    X = check_instances(X, spec)
    masks = check_masks(masks, spec, X.shape[0])
    B, N, K = X.shape[0], spec.n_vars, spec.alphabet_size
    scale = _example_scale(masks, objective_weights, N)

    acts = _forward(params, encode_input(X, masks, spec))
    logp = log_softmax(acts[-1].reshape(B, N, K), axis=2)
    rows = np.arange(B)[:, None]
    picked = logp[rows, np.arange(N)[None, :], X]
    missing = ~masks
    loss = -float((scale * np.where(missing, picked, 0.0).sum(axis=1)).sum() / B)

    dlogits = np.exp(logp)
    dlogits[rows, np.arange(N)[None, :], X] -= 1.0
    dlogits *= (missing * (scale / B)[:, None])[:, :, None]
    delta = dlogits.reshape(B, N * K)

    grads = {}
    last = len(params.weights) - 1
    for l in range(last, -1, -1):
        grads[f"W{l}"] = acts[l].T @ delta
        grads[f"b{l}"] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * (1.0 - acts[l] ** 2)
    return loss, {k: grads[k] for k in params.as_dict()}


class NetworkModel(ConditionalModel):
    def __init__(self, params: NetworkParams):
        self.params = params
        self.spec = params.spec

    def log_predict_proba(self, X, masks):
        X = check_instances(X, self.spec)
        return log_softmax(network_logits(self.params, X, masks), axis=2)

    def loss_and_grad(self, X, masks, objective_weights=None):
        return loss_and_grad(self.params, X, masks, objective_weights)

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params.as_dict()


# ---------------------------------------------------------------------------
# tabular model

class TabularModel(ConditionalModel):
    """Free logits for every ``(mask, observed values, target)`` slot.

    Memory is ``2^N * K^N * N * K`` floats, so only tiny lattices qualify.
    """

    max_entries = 1 << 22

    def __init__(self, spec: LatticeSpec):
        size = (1 << spec.n_vars) * spec.alphabet_size ** spec.n_vars * spec.n_vars * spec.alphabet_size
        if size > self.max_entries:
            raise CapacityError(f"tabular model would need {size} logits")
        self.spec = spec
        self.logits = np.zeros((1 << spec.n_vars, spec.alphabet_size ** spec.n_vars, spec.n_vars, spec.alphabet_size))
        self._radix = spec.alphabet_size ** np.arange(spec.n_vars)
        self._bit = 1 << np.arange(spec.n_vars)

    def slot_index(self, X, masks):
        return masks.astype(np.int64) @ self._bit, (X * masks) @ self._radix

    def log_predict_proba(self, X, masks):
        X = check_instances(X, self.spec)
        masks = check_masks(masks, self.spec, X.shape[0])
        mcode, xcode = self.slot_index(X, masks)
        return log_softmax(self.logits[mcode, xcode], axis=2)

    def loss_and_grad(self, X, masks, objective_weights=None):
        X = check_instances(X, self.spec)
        masks = check_masks(masks, self.spec, X.shape[0])
        B, N = X.shape
        scale = _example_scale(masks, objective_weights, N)
        mcode, xcode = self.slot_index(X, masks)
        logp = log_softmax(self.logits[mcode, xcode], axis=2)
        rows = np.arange(B)[:, None]
        cols = np.arange(N)[None, :]
        missing = ~masks
        loss = -float((scale * np.where(missing, logp[rows, cols, X], 0.0).sum(axis=1)).sum() / B)
        d = np.exp(logp)
        d[rows, cols, X] -= 1.0
        d *= (missing * (scale / B)[:, None])[:, :, None]
        grad = np.zeros_like(self.logits)
        np.add.at(grad, (mcode, xcode), d)
        return loss, {"logits": grad}

    def parameters(self):
        return {"logits": self.logits}


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: NetworkParams, path) -> None:
    """Versioned JSON; floats use the shortest repr, which round-trips exactly."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "n_vars": params.n_vars,
        "alphabet_size": params.alphabet_size,
        "hidden_sizes": list(params.hidden_sizes),
        "seed": params.seed,
        "step": params.step,
        "layers": [
            {
                "weight": {"shape": list(W.shape), "data": W.ravel().tolist()},
                "bias": {"shape": list(b.shape), "data": b.ravel().tolist()},
            }
            for W, b in zip(params.weights, params.biases)
        ],
    }
    _FsPath(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> NetworkParams:
    try:
        doc = json.loads(_FsPath(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    spec = LatticeSpec(int(doc["n_vars"]), int(doc["alphabet_size"]))
    hidden = tuple(int(h) for h in doc["hidden_sizes"])
    sizes = _layer_sizes(spec, hidden)
    weights, biases = [], []
    for layer, (fan_in, fan_out) in zip(doc["layers"], zip(sizes[:-1], sizes[1:])):
        W = np.asarray(layer["weight"]["data"], dtype=float).reshape(layer["weight"]["shape"])
        b = np.asarray(layer["bias"]["data"], dtype=float).reshape(layer["bias"]["shape"])
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ParseError("layer shapes do not match n_vars/alphabet_size/hidden_sizes")
        weights.append(W)
        biases.append(b)
    if len(weights) != len(sizes) - 1:
        raise ParseError("wrong number of layers")
    return NetworkParams(spec.n_vars, spec.alphabet_size, hidden, weights, biases, doc.get("seed"), int(doc.get("step", 0)))
