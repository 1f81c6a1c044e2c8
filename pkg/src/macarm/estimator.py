"""scikit-learn compatible wrapper around the conditional network and its trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from .distributions import CardMaskDistribution
from .engine import Objective, TrainConfig, complete_batch, eval_marginal_batch, train
from .exceptions import ValidationError
from .lattice import LatticeSpec
from .model import NetworkModel, init_network
from .protocols import get_protocol, make_rng
from .validation import check_instances, check_masks


class MACEstimator(DensityMixin, BaseEstimator):
    """Arbitrary-conditional density estimator over discrete variables.

    Parameters
    ----------
    alphabet_size : int or None
        Symbols per variable. ``None`` infers ``max(X) + 1`` (at least 2) at fit.
    objective : str
        Training mask distribution: ``mac-cr``, ``mac-nocr``, ``rnd-cr``,
        ``rnd-nocr`` or ``ardm``.
    hidden_sizes : tuple of int
        Hidden layer widths of the weight-tied network.
    steps, batch_size, learning_rate, lr_schedule, outer_factor
        Optimisation settings passed to the trainer.
    random_state : int or None
        Seed for initialisation, mask streams and minibatches.
    """

    def __init__(self, alphabet_size=None, objective="mac-cr", hidden_sizes=(128,), steps=2000,
                 batch_size=256, learning_rate=1e-3, lr_schedule="constant", outer_factor=100,
                 random_state=None):
        self.alphabet_size = alphabet_size
        self.objective = objective
        self.hidden_sizes = hidden_sizes
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.outer_factor = outer_factor
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValidationError("X must be a non-empty 2-D array of symbols")
        K = self.alphabet_size
        if K is None:
            K = max(2, int(np.max(X)) + 1)
        self.spec_ = LatticeSpec(X.shape[1], int(K))
        X = check_instances(X, self.spec_)
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = TrainConfig(
            objective=self.objective, batch=self.batch_size, steps=self.steps, lr=self.learning_rate,
            lr_schedule=self.lr_schedule, seed=seed, outer_factor=self.outer_factor,
            record_wall_time=False,
        )
        params = init_network(self.spec_, self.hidden_sizes, seed=seed)
        self.model_, self.training_log_ = train(NetworkModel(params), X, cfg, self.spec_, make_rng(seed))
        self.params_ = self.model_.params
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def protocol_(self):
        return Objective.from_name(self.objective).eval_protocol

    def _check(self, X):
        check_is_fitted(self, "model_")
        return check_instances(X, self.spec_)

    def predict_proba(self, X, masks):
        """``(n, N, K)`` conditional probabilities given the observed entries."""
        X = self._check(X)
        return self.model_.predict_proba(X, check_masks(masks, self.spec_, len(X)))

    def score_samples(self, X, masks=None, protocol=None, random_state=None):
        """Log-likelihood of each row restricted to ``masks`` (all variables by default)."""
        X = self._check(X)
        masks = np.ones_like(X, dtype=bool) if masks is None else check_masks(masks, self.spec_, len(X))
        w = get_protocol(protocol) if protocol is not None else self.protocol_
        return eval_marginal_batch(self.model_, X, masks, w, make_rng(random_state))

    def score(self, X, y=None):
        """Mean joint log-likelihood."""
        return float(self.score_samples(X).mean())

    def marginal_score(self, X, trials=1, random_state=None):
        """Mean marginal log-likelihood under the uniform-cardinality test masks."""
        X = np.tile(self._check(X), (trials, 1))
        rng = make_rng(random_state)
        masks = CardMaskDistribution(self.spec_).sample(len(X), rng)
        return float(eval_marginal_batch(self.model_, X, masks, self.protocol_, rng).mean())

    def complete(self, X, masks, random_state=None):
        """Sample the unobserved entries of each row."""
        X = self._check(X)
        return complete_batch(self.model_, X, check_masks(masks, self.spec_, len(X)), make_rng(random_state))
