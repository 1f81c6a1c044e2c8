"""Training objectives and inference with univariate conditional models.

Inference walks decomposition paths: the log-marginal of ``x_e`` is the
sum of ``log p(x_j | x_{e minus removed})`` along the path the protocol
takes from ``e`` to the empty mask. All evaluation routines are batched:
every edge of every path in a batch goes through the model in a single
call.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import (
    DEFAULT_OUTER_FACTOR,
    CardMaskDistribution,
    baseline_edge_sampler,
    sample_induced_nodes,
    sample_reweighted_batch,
)
from .exceptions import InvalidArgumentError, ValidationError
from .lattice import LatticeSpec, Mask
from .model import ConditionalModel, NetworkModel, NetworkParams
from .optim import make_optimizer, scheduled_lr
from .protocols import W_MAC, W_RND, Protocol, get_protocol, make_rng
from .validation import check_instances, check_masks

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class Objective:
    """Training mask distribution of one ablation arm."""

    kind: str
    protocol: Protocol
    reweight: bool

    KINDS = ("mac-cr", "mac-nocr", "rnd-cr", "rnd-nocr", "ardm")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidArgumentError(f"unknown objective {self.kind!r}; expected one of {self.KINDS}")
        expected = self._expected(self.kind)
        if (self.protocol.name, self.reweight) != expected:
            raise ValidationError(
                f"objective {self.kind} needs protocol={expected[0]!r}, reweight={expected[1]}"
            )

    @staticmethod
    def _expected(kind):
        if kind == "ardm":
            return ("rnd", False)
        proto, cr = kind.split("-")
        return (proto, cr == "cr")

    @classmethod
    def from_name(cls, name: str) -> "Objective":
        name = name.lower().replace("_", "-")
        if name not in cls.KINDS:
            raise InvalidArgumentError(f"unknown objective {name!r}; expected one of {cls.KINDS}")
        proto, reweight = cls._expected(name)
        return cls(name, get_protocol(proto), reweight)

    @property
    def eval_protocol(self) -> Protocol:
        return self.protocol


@dataclass
class TrainConfig:
    objective: str = "mac-cr"
    batch: int = 256
    steps: int = 20_000
    lr: float = 1e-3
    lr_schedule: str = "constant"
    optimizer: str = "adam"
    seed: int = 0
    outer_factor: int = DEFAULT_OUTER_FACTOR
    eval_every: int = 0
    eval_size: int = 512
    sampler: str = "exact"
    record_wall_time: bool = True

    def __post_init__(self):
        for name in ("batch", "outer_factor", "eval_size"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.steps < 0 or self.eval_every < 0:
            raise ValidationError("steps and eval_every must be non-negative")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        Objective.from_name(self.objective)

    @property
    def objective_spec(self) -> Objective:
        return Objective.from_name(self.objective)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# inference

def _path_edges(masks: np.ndarray, ranks: np.ndarray):
    """Flatten every path edge: (row, target, source mask)."""
    card = masks.sum(axis=1)
    rows, targets, sources = [], [], []
    for k in range(masks.shape[1]):
        live = np.flatnonzero(card > k)
        if not len(live):
            break
        rk = ranks[live]
        targets.append(np.argmax(rk == k, axis=1))
        sources.append(masks[live] & (rk > k))
        rows.append(live)
    if not rows:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, masks.shape[1]), bool)
    return np.concatenate(rows), np.concatenate(targets), np.concatenate(sources)


def eval_marginal_batch(m: ConditionalModel, X, masks, w: Protocol = W_MAC, rng=None) -> np.ndarray:
    """Log-marginal ``log p(x_e)`` per row, accumulated along protocol paths."""
    X = check_instances(X, m.spec)
    masks = check_masks(masks, m.spec, X.shape[0])
    if rng is None and not w.deterministic:
        raise InvalidArgumentError("a random protocol needs an rng")
    ranks = w.removal_ranks(masks, rng)
    rows, targets, sources = _path_edges(masks, ranks)
    out = np.zeros(X.shape[0])
    if len(rows):
        terms = m.log_conditionals(X[rows], sources, targets)
        # accumulate from the empty-mask end so log p(x_e) is computed as
        # log p(x_{e minus j}) + log p(x_j | x_{e minus j}) bit for bit
        np.add.at(out, rows[::-1], terms[::-1])
    return out


def eval_marginal(m: ConditionalModel, x, e: Mask, w: Protocol = W_MAC, rng=None) -> float:
    return float(eval_marginal_batch(m, np.asarray(x)[None, :], e, w, rng)[0])


def eval_joint_batch(m: ConditionalModel, X, w: Protocol = W_MAC, rng=None) -> np.ndarray:
    X = check_instances(X, m.spec)
    full = np.ones_like(X, dtype=bool)
    return eval_marginal_batch(m, X, full, w, rng)


def eval_joint(m: ConditionalModel, x, w: Protocol = W_MAC, rng=None) -> float:
    """Joint log-likelihood; under the largest-first protocol this is the
    ascending-order autoregressive factorization."""
    return float(eval_joint_batch(m, np.asarray(x)[None, :], w, rng)[0])


def eval_joint_elbo(m: ConditionalModel, x, order_samples: int, rng) -> float:
    """Average chain-rule log-likelihood over uniformly random orderings."""
    if order_samples < 1:
        raise InvalidArgumentError("order_samples must be >= 1")
    X = np.repeat(np.asarray(x, dtype=np.int64)[None, :], order_samples, axis=0)
    return float(eval_joint_batch(m, X, W_RND, rng).mean())


def marginal_bpd(log_probs, masks, per: str = "observed") -> np.ndarray:
    """Bits per dimension; empty masks report 0.

    ``per="observed"`` divides by ``|e|``, ``per="all"`` by ``N``.
    """
    masks = np.asarray(masks, dtype=bool)
    if per == "observed":
        card = masks.sum(axis=1)
    elif per == "all":
        card = np.where(masks.any(axis=1), masks.shape[1], 0)
    else:
        raise InvalidArgumentError(f"per must be 'observed' or 'all', got {per!r}")
    return np.divide(-np.asarray(log_probs), card * LN2, out=np.zeros(len(card)), where=card > 0)


# ---------------------------------------------------------------------------
# completion

def complete_batch(m: ConditionalModel, X, masks, rng) -> np.ndarray:
    """Fill unobserved entries in ascending index order.

    Each variable is drawn from the model conditioned on everything fixed so
    far, by inverse CDF over symbols in ascending order.
    """
    X = check_instances(X, m.spec).copy()
    masks = check_masks(masks, m.spec, X.shape[0]).copy()
    for v in range(m.spec.n_vars):
        todo = np.flatnonzero(~masks[:, v])
        if not len(todo):
            continue
        probs = m.predict_proba(X[todo], masks[todo])[:, v, :]
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(len(todo))[:, None] * cdf[:, -1:]
        X[todo, v] = np.minimum((u >= cdf).sum(axis=1), m.spec.alphabet_size - 1)
        masks[todo, v] = True
    return X


def complete(m: ConditionalModel, x, e: Mask, rng) -> np.ndarray:
    return complete_batch(m, np.asarray(x)[None, :], e, rng)[0]


# ---------------------------------------------------------------------------
# training

def sample_training_masks(objective: Objective, batch: int, spec: LatticeSpec, rng,
                          outer_factor: int = DEFAULT_OUTER_FACTOR, method: str = "exact"):
    """Training nodes and per-example objective weights for one step.

    Every arm trains all missing targets at the drawn node. The baseline
    draws the source node of a uniform (order, position) edge and carries
    the leading factor N of its objective as a per-example weight.
    """
    if objective.kind == "ardm":
        _, masks = baseline_edge_sampler(batch, spec, rng)
        return masks, np.full(batch, float(spec.n_vars))
    if objective.reweight:
        masks = sample_reweighted_batch(batch, spec, outer_factor, rng, objective.protocol, method=method)
    else:
        masks = sample_induced_nodes(batch, spec, rng, objective.protocol, method=method)
    return masks, np.ones(batch)


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("step", "train_loss", "eval_marginal_nll", "eval_joint_nll", "wall_ms")

    def append(self, **row):
        self.rows.append(row)

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.rows:
            lines.append("\t".join(_fmt_cell(r.get(c)) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    def losses(self) -> np.ndarray:
        return np.array([r["train_loss"] for r in self.rows])


def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _eval_stats(model, X_eval, eval_masks, protocol, eval_rng_seed):
    rng = make_rng(eval_rng_seed)
    marg = eval_marginal_batch(model, X_eval, eval_masks, protocol, rng)
    joint = eval_joint_batch(model, X_eval, protocol, rng)
    return -float(marg.mean()), -float(joint.mean())


def train(model, data, cfg: TrainConfig, spec: LatticeSpec | None = None, rng=None, eval_data=None):
    """Minimise the configured objective with minibatch steps.

    ``model`` is a :class:`NetworkParams`, :class:`NetworkModel`, or any
    model exposing ``loss_and_grad`` and ``parameters``; it is updated in
    place. Returns ``(model, TrainingLog)``.
    """
    if isinstance(model, NetworkParams):
        model = NetworkModel(model)
    spec = spec or model.spec
    if spec != model.spec:
        raise ValidationError("model and data live on different lattices")
    data = check_instances(data, spec)
    if len(data) == 0:
        raise ValidationError("training data is empty")
    objective = cfg.objective_spec
    rng = rng if rng is not None else make_rng(cfg.seed)
    mask_rng, data_rng = rng.spawn(2)

    eval_seed = cfg.seed + 1_000_003
    X_eval = check_instances(eval_data, spec) if eval_data is not None else data
    X_eval = X_eval[: cfg.eval_size]
    eval_masks = CardMaskDistribution(spec).sample(len(X_eval), make_rng(eval_seed))

    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    log = TrainingLog()
    start = time.perf_counter()
    for step in range(cfg.steps):
        masks, weights = sample_training_masks(objective, cfg.batch, spec, mask_rng, cfg.outer_factor, cfg.sampler)
        if np.any(masks.all(axis=1)):
            raise AssertionError("training drew a full mask")
        X = data[data_rng.integers(len(data), size=cfg.batch)]
        loss, grads = model.loss_and_grad(X, masks, weights)
        opt.step(params, grads, scheduled_lr(cfg.lr, step, cfg.steps, cfg.lr_schedule))
        last = step == cfg.steps - 1
        if cfg.eval_every and ((step + 1) % cfg.eval_every == 0 or last):
            marg, joint = _eval_stats(model, X_eval, eval_masks, objective.eval_protocol, eval_seed)
            wall = round((time.perf_counter() - start) * 1000) if cfg.record_wall_time else 0
            log.append(step=step + 1, train_loss=loss, eval_marginal_nll=marg, eval_joint_nll=joint, wall_ms=wall)
        elif cfg.eval_every == 0:
            log.append(step=step + 1, train_loss=loss)
    if isinstance(model, NetworkModel):
        model.params.step += cfg.steps
    return model, log
