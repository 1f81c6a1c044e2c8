"""Input validation helpers in the scikit-learn style."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidArgumentError, ValidationError
from .lattice import LatticeSpec, as_bool_matrix


def check_instances(X, spec: LatticeSpec) -> np.ndarray:
    """Validate a batch of instances: 2-D integer array with symbols in ``[0, K)``."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    try:
        X = check_array(X, dtype=None, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ValidationError("instances must contain integer symbols")
        X = X.astype(np.int64)
    X = X.astype(np.int64, copy=False)
    if X.shape[1] != spec.n_vars:
        raise ValidationError(f"expected {spec.n_vars} variables per instance, got {X.shape[1]}")
    bad = (X < 0) | (X >= spec.alphabet_size)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ValidationError(
            f"symbol {X[row, col]} at instance {row}, variable {col} outside [0, {spec.alphabet_size})"
        )
    return X


def check_masks(masks, spec: LatticeSpec, n_rows: int | None = None) -> np.ndarray:
    masks = as_bool_matrix(masks, spec)
    if n_rows is not None:
        if masks.shape[0] == 1 and n_rows != 1:
            masks = np.broadcast_to(masks, (n_rows, spec.n_vars))
        elif masks.shape[0] != n_rows:
            raise InvalidArgumentError(f"got {masks.shape[0]} masks for {n_rows} instances")
    return masks
