"""Experiment orchestration: synthetic data, evaluation suites, ablations, reports."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (
    CardMaskDistribution,
    MaskDistribution,
    ProbTable,
    _fmt_prob,
    entropy,
    expected_cardinality,
    induced_edge_exact,
    induced_node_mc,
    induced_node_table,
    reweight_cardinality,
)
from .engine import LN2, Objective, TrainConfig, eval_joint_batch, eval_marginal_batch, marginal_bpd, train
from .exceptions import CapacityError, InvalidArgumentError, ParseError, ValidationError
from .lattice import LatticeSpec, bool_to_codes
from .model import JOINT_CAPACITY, ConditionalModel, JointTable, MixtureOracle, NetworkModel, init_network
from .protocols import Protocol, get_protocol, make_rng
from .validation import check_instances

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
CONFIG_KEYS = {
    "version", "objective", "protocol", "reweight", "steps", "batch", "lr",
    "seed", "eval_every", "outer_factor", "hidden_sizes",
}
ARMS = ("ardm", "rnd-nocr", "rnd-cr", "mac-nocr", "mac-cr")


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    spec: LatticeSpec
    instances: np.ndarray
    oracle: ConditionalModel | None = None

    def __post_init__(self):
        self.instances = check_instances(self.instances, self.spec) if len(self.instances) else \
            np.zeros((0, self.spec.n_vars), dtype=np.int64)
        if self.oracle is not None and self.oracle.spec != self.spec:
            raise ValidationError("oracle spec does not match dataset spec")

    def __len__(self):
        return len(self.instances)

    @property
    def joint(self) -> JointTable:
        """Exact joint table of the generating distribution (built on demand)."""
        if isinstance(self.oracle, MixtureOracle):
            return self.oracle.joint_table()
        if self.oracle is not None and hasattr(self.oracle, "joint"):
            return self.oracle.joint
        raise ValidationError("dataset has no ground-truth distribution")


def generate_synthetic(kind: str, spec: LatticeSpec, params: dict | None, rng, n_instances: int) -> Dataset:
    """Sample a dataset from a product or mixture-of-products distribution.

    ``params`` for ``product``: ``probs`` (N, K), or ``alpha`` for a random
    Dirichlet draw. For ``mixture``: ``weights`` and ``component_probs``
    (C, N, K), or ``n_components`` and ``alpha``.
    """
    params = dict(params or {})
    K, N = spec.alphabet_size, spec.n_vars
    if K ** N > JOINT_CAPACITY:
        raise CapacityError(f"joint table {K}^{N} exceeds capacity {JOINT_CAPACITY}")
    if kind == "product":
        probs = params.get("probs")
        if probs is None:
            probs = rng.dirichlet(np.full(K, params.get("alpha", 1.0)), size=N)
        weights, theta = np.ones(1), np.asarray(probs, dtype=float)[None]
    elif kind == "mixture":
        theta = params.get("component_probs")
        if theta is None:
            C = int(params.get("n_components", 8))
            theta = rng.dirichlet(np.full(K, params.get("alpha", 0.5)), size=(C, N))
        theta = np.asarray(theta, dtype=float)
        weights = params.get("weights")
        weights = np.full(len(theta), 1.0 / len(theta)) if weights is None else np.asarray(weights, dtype=float)
    else:
        raise InvalidArgumentError(f"unknown synthetic kind {kind!r}")
    oracle = MixtureOracle(spec, weights, theta)
    return Dataset(spec, oracle.sample(n_instances, rng), oracle)


def _parse_header(line: str, lineno: int) -> LatticeSpec:
    try:
        fields = dict(part.split("=", 1) for part in line.strip().split(","))
        return LatticeSpec(int(fields["n_vars"]), int(fields["alphabet"]))
    except (ValueError, KeyError) as exc:
        raise ParseError(f"bad header {line.strip()!r}; expected 'n_vars=<N>,alphabet=<K>'", lineno) from exc


def _read_rows(path, allow_missing: bool):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    spec = _parse_header(lines[0], 1)
    rows, observed = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != spec.n_vars:
            raise ParseError(f"expected {spec.n_vars} values, got {len(cells)}", lineno)
        row, seen = [], []
        for c in cells:
            if c == "?" and allow_missing:
                row.append(0)
                seen.append(False)
                continue
            try:
                v = int(c)
            except ValueError:
                raise ParseError(f"not an integer symbol: {c!r}", lineno) from None
            if not 0 <= v < spec.alphabet_size:
                raise ParseError(f"symbol {v} outside [0, {spec.alphabet_size})", lineno)
            row.append(v)
            seen.append(True)
        rows.append(row)
        observed.append(seen)
    X = np.array(rows, dtype=np.int64).reshape(-1, spec.n_vars)
    return spec, X, np.array(observed, dtype=bool).reshape(-1, spec.n_vars)


def load_dataset(path) -> Dataset:
    spec, X, _ = _read_rows(path, allow_missing=False)
    return Dataset(spec, X)


def save_dataset(d: Dataset, path) -> None:
    lines = [f"n_vars={d.spec.n_vars},alphabet={d.spec.alphabet_size}"]
    lines += [",".join(map(str, row)) for row in d.instances.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_masked(path) -> tuple[LatticeSpec, np.ndarray, np.ndarray]:
    """Masked-instance CSV: unobserved entries are ``?``. Returns (spec, X, masks)."""
    return _read_rows(path, allow_missing=True)


def save_masked(spec: LatticeSpec, X, masks, path) -> None:
    lines = [f"n_vars={spec.n_vars},alphabet={spec.alphabet_size}"]
    for row, seen in zip(np.asarray(X).tolist(), np.asarray(masks, dtype=bool).tolist()):
        lines.append(",".join(str(v) if s else "?" for v, s in zip(row, seen)))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# configs

def load_train_config(path_or_dict) -> tuple[TrainConfig, tuple[int, ...]]:
    """Parse the versioned JSON training config; unknown keys are errors."""
    if isinstance(path_or_dict, dict):
        doc = dict(path_or_dict)
    else:
        try:
            doc = json.loads(Path(path_or_dict).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {doc.get('version')!r}")
    kwargs = {k: doc[k] for k in ("objective", "steps", "batch", "lr", "seed", "eval_every", "outer_factor") if k in doc}
    cfg = TrainConfig(**kwargs)
    objective = cfg.objective_spec
    if "protocol" in doc and get_protocol(doc["protocol"]).name != objective.protocol.name:
        raise ValidationError(f"protocol {doc['protocol']!r} contradicts objective {cfg.objective!r}")
    if "reweight" in doc and bool(doc["reweight"]) != objective.reweight:
        raise ValidationError(f"reweight={doc['reweight']} contradicts objective {cfg.objective!r}")
    hidden = tuple(int(h) for h in doc.get("hidden_sizes", (128,)))
    return cfg, hidden


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class SuiteResult:
    nll: float
    bpd: float
    n_queries: int
    mask_hash: str


def mask_stream_hash(masks: np.ndarray) -> str:
    return hashlib.sha256(bool_to_codes(masks).astype("<i8").tobytes()).hexdigest()[:16]


def marginal_nll_suite(m: ConditionalModel, d: Dataset, M: MaskDistribution | None = None,
                       w: Protocol | str = "mac", trials: int = 1, rng=None,
                       mask_rng=None) -> SuiteResult:
    """Mean negative marginal log-likelihood over instances and masks ``e ~ M``.

    ``mask_rng`` (defaulting to ``rng``) drives the masks, so different
    models can be scored on an identical mask stream.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    M = M or CardMaskDistribution(d.spec)
    w = get_protocol(w)
    rng = rng if rng is not None else make_rng()
    mask_rng = mask_rng if mask_rng is not None else rng
    X = np.tile(d.instances, (trials, 1))
    masks = M.sample(len(X), mask_rng)
    logp = eval_marginal_batch(m, X, masks, w, rng)
    bpd = marginal_bpd(logp, masks)
    return SuiteResult(-float(logp.mean()), float(bpd.mean()), len(X), mask_stream_hash(masks))


# ---------------------------------------------------------------------------
# distribution report

@dataclass
class DistReport:
    spec: LatticeSpec
    columns: dict[str, ProbTable]
    mode: str

    @property
    def entropies(self) -> dict[str, float]:
        return {name: entropy(t) for name, t in self.columns.items()}

    def to_tsv(self) -> str:
        names = list(self.columns)
        dense = {k: t.to_dense() for k, t in self.columns.items()}
        sort_col = "mac" if "mac" in dense else names[-1]
        order = sorted(range(self.spec.n_masks),
                       key=lambda c: (-dense[sort_col][c], format(c, f"0{self.spec.n_vars}b")))
        lines = ["mask\t" + "\t".join(names)]
        for c in order:
            if not any(dense[k][c] for k in names):
                continue
            lines.append(format(c, f"0{self.spec.n_vars}b") + "\t" + "\t".join(_fmt_prob(dense[k][c]) for k in names))
        return "\n".join(lines) + "\n"

    def entropy_tsv(self) -> str:
        return "column\tentropy_nats\n" + "".join(f"{k}\t{v:.9g}\n" for k, v in self.entropies.items())


def dist_report(spec: LatticeSpec, M: MaskDistribution | None = None, protocols=("rnd", "mac"),
                mode: str = "exact", samples: int = 1_000_000, rng=None) -> DistReport:
    """Test distribution, induced node table per protocol, and the reweighted MAC table."""
    M = M or CardMaskDistribution(spec)
    if mode == "exact":
        spec.require_exact()
    elif mode != "mc":
        raise InvalidArgumentError(f"mode must be 'exact' or 'mc', got {mode!r}")
    rng = rng if rng is not None else make_rng(0)
    columns = {"M": M.table()}
    for name in protocols:
        w = get_protocol(name)
        if mode == "exact":
            columns[w.name] = induced_node_table(induced_edge_exact(M, w, spec))
        else:
            columns[w.name] = induced_node_mc(M, w, spec, samples, rng)
    if "mac" in columns:
        columns["mac-cr"] = reweight_cardinality(columns["mac"])
    return DistReport(spec, columns, mode)


# ---------------------------------------------------------------------------
# ablation

@dataclass
class AblationConfig:
    n_vars: int = 12
    alphabet_size: int = 4
    n_components: int = 8
    alpha: float = 0.5
    n_train: int = 50_000
    n_test: int = 10_000
    data_seed: int = 0
    eval_seed: int = 7
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    arms: tuple[str, ...] = ARMS
    steps: int = 20_000
    batch: int = 256
    lr: float = 1e-3
    lr_schedule: str = "constant"
    hidden_sizes: tuple[int, ...] = (128,)
    outer_factor: int = 100
    eval_every: int = 0
    eval_trials: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.arms = tuple(a.lower() for a in self.arms)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        for arm in self.arms:
            Objective.from_name(arm)

    @property
    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.n_vars, self.alphabet_size)

    @classmethod
    def from_dict(cls, doc: dict) -> "AblationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown ablation config keys: {sorted(unknown)}")
        return cls(**doc)

    def train_config(self, arm: str, seed: int) -> TrainConfig:
        return TrainConfig(
            objective=arm, batch=self.batch, steps=self.steps, lr=self.lr, lr_schedule=self.lr_schedule,
            seed=seed, outer_factor=self.outer_factor, eval_every=self.eval_every,
            record_wall_time=False,
        )


@dataclass
class ArmResult:
    objective: str
    seed: int
    eval_protocol: str
    marginal_nll: float
    marginal_bpd: float
    marginal_nll_mac: float
    marginal_nll_rnd: float
    joint_nll: float
    joint_bpd: float
    final_train_loss: float | None
    mask_hash: str
    curve: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: dict
    arms: list[ArmResult]
    oracle: dict
    distribution: dict

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "arms": [asdict(a) for a in self.arms],
            "oracle": self.oracle,
            "distribution": self.distribution,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def mean_nll(self) -> dict[str, float]:
        out = {}
        for a in self.arms:
            out.setdefault(a.objective, []).append(a.marginal_nll)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def per_seed(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for a in self.arms:
            out.setdefault(a.seed, {})[a.objective] = a.marginal_nll
        return out


def _evaluate(model, test: Dataset, protocol_name: str, eval_seed: int, trials: int) -> dict:
    results = {}
    for name in ("mac", "rnd"):
        results[name] = marginal_nll_suite(
            model, test, trials=trials, w=name,
            rng=make_rng([eval_seed, 1]), mask_rng=make_rng([eval_seed, 0]),
        )
    joint = -eval_joint_batch(model, test.instances, get_protocol(protocol_name), make_rng([eval_seed, 2]))
    return {"suite": results, "joint_nll": float(joint.mean())}


def _run_arm(cfg: AblationConfig, arm: str, seed: int, train_X: np.ndarray, test: Dataset) -> ArmResult:
    spec = cfg.spec
    tcfg = cfg.train_config(arm, seed)
    params = init_network(spec, cfg.hidden_sizes, seed=seed)
    model, log = train(NetworkModel(params), train_X, tcfg, spec, make_rng(seed), eval_data=test.instances)
    protocol = tcfg.objective_spec.eval_protocol.name
    ev = _evaluate(model, test, protocol, cfg.eval_seed, cfg.eval_trials)
    own = ev["suite"][protocol]
    curve = [[r["step"], r["eval_marginal_nll"]] for r in log.rows if r.get("eval_marginal_nll") is not None]
    logger.info("arm %s seed %d: marginal nll %.5f", arm, seed, own.nll)
    return ArmResult(
        objective=arm, seed=seed, eval_protocol=protocol,
        marginal_nll=own.nll, marginal_bpd=own.bpd,
        marginal_nll_mac=ev["suite"]["mac"].nll, marginal_nll_rnd=ev["suite"]["rnd"].nll,
        joint_nll=ev["joint_nll"], joint_bpd=ev["joint_nll"] / (spec.n_vars * LN2),
        final_train_loss=float(log.rows[-1]["train_loss"]) if log.rows else None,
        mask_hash=own.mask_hash, curve=curve,
    )


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MAC_THREADS", "1")))
    except ValueError:
        return 1


def ablation_data(cfg: AblationConfig) -> tuple[Dataset, Dataset]:
    rng = make_rng(cfg.data_seed)
    full = generate_synthetic(
        "mixture", cfg.spec, {"n_components": cfg.n_components, "alpha": cfg.alpha}, rng,
        cfg.n_train + cfg.n_test,
    )
    train_d = Dataset(cfg.spec, full.instances[: cfg.n_train], full.oracle)
    test_d = Dataset(cfg.spec, full.instances[cfg.n_train:], full.oracle)
    return train_d, test_d


def run_ablation(cfg: AblationConfig, n_jobs: int | None = None) -> ExperimentReport:
    """Train every arm for every seed on shared data and score on shared test masks."""
    spec = cfg.spec
    train_d, test_d = ablation_data(cfg)
    jobs = [(arm, seed) for seed in cfg.seeds for arm in cfg.arms]
    n_jobs = n_jobs or _worker_count()
    if n_jobs > 1:
        from joblib import Parallel, delayed

        arms = Parallel(n_jobs=n_jobs)(
            delayed(_run_arm)(cfg, arm, seed, train_d.instances, test_d) for arm, seed in jobs
        )
    else:
        arms = [_run_arm(cfg, arm, seed, train_d.instances, test_d) for arm, seed in jobs]

    oracle_eval = _evaluate(train_d.oracle, test_d, "mac", cfg.eval_seed, cfg.eval_trials)
    distribution = {}
    if spec.n_vars <= 16:
        report = dist_report(spec)
        distribution["entropy_nats"] = report.entropies
        edges = induced_edge_exact(CardMaskDistribution(spec), get_protocol("mac"), spec)
        distribution["path_length_constant"] = expected_cardinality(edges).path_length
    return ExperimentReport(
        config=asdict(cfg),
        arms=arms,
        oracle={"marginal_nll_mac": oracle_eval["suite"]["mac"].nll,
                "marginal_nll_rnd": oracle_eval["suite"]["rnd"].nll,
                "joint_nll": oracle_eval["joint_nll"]},
        distribution=distribution,
    )
