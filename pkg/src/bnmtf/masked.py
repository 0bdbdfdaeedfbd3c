"""Dense matrices with an observation mask, and the fit metrics used on them."""
from __future__ import annotations

import numpy as np


class MaskedMatrix:
    """An I x J matrix of which only the cells flagged in ``mask`` are observed.

    Values at unobserved cells are replaced by 0.0 on construction and are
    never read by any metric or update.
    """

    def __init__(self, values, mask):
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise ValueError(
                f"values {values.shape} and mask {mask.shape} must be 2-D arrays of equal shape"
            )
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("matrix must have at least one row and one column")
        if not mask.any():
            raise ValueError("matrix has no observed cells")
        self.values = np.where(mask, values, 0.0)
        self.values.setflags(write=False)
        self.mask = mask.copy()
        self.mask.setflags(write=False)
        self.weights = self.mask.astype(np.float64)
        self.weights.setflags(write=False)
        self.row_index_sets = tuple(np.flatnonzero(row) for row in self.mask)
        self.column_index_sets = tuple(np.flatnonzero(col) for col in self.mask.T)

    @classmethod
    def fully_observed(cls, values) -> "MaskedMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def observed_fraction(self) -> float:
        return self.n_observed / self.mask.size

    def observed(self) -> np.ndarray:
        """Observed values in row-major order."""
        return self.values[self.mask]

    def with_mask(self, mask) -> "MaskedMatrix":
        """Same values restricted to ``mask`` (which must be a subset of this mask)."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise ValueError("new mask selects unobserved cells")
        return MaskedMatrix(self.values, mask)

    def __repr__(self) -> str:
        i, j = self.shape
        return f"MaskedMatrix({i}x{j}, observed={self.n_observed})"


def from_dense(values, mask) -> MaskedMatrix:
    return MaskedMatrix(values, mask)


def _check_shape(data: MaskedMatrix, prediction: np.ndarray) -> np.ndarray:
    prediction = np.asarray(prediction, dtype=np.float64)
    if prediction.shape != data.shape:
        raise ValueError(f"prediction shape {prediction.shape} != data shape {data.shape}")
    return prediction


def mse(data: MaskedMatrix, prediction) -> float:
    """Mean squared error over the observed cells."""
    prediction = _check_shape(data, prediction)
    residual = data.values[data.mask] - prediction[data.mask]
    return float(np.dot(residual, residual) / data.n_observed)


def i_divergence(data: MaskedMatrix, prediction) -> float:
    """Generalised KL divergence D(R || P) summed over the observed cells.

    Uses the convention 0 * log(0 / p) = 0 for zero data values.
    """
    prediction = _check_shape(data, prediction)
    r = data.values[data.mask]
    p = prediction[data.mask]
    if np.any(p <= 0):
        raise ValueError("prediction must be strictly positive at observed cells")
    if np.any(r < 0):
        raise ValueError("data must be nonnegative at observed cells")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0) / p), 0.0)
    return float(np.sum(log_term - r + p))
