"""Quantile binning of feature columns for histogram training.

Bin code 0 is reserved for exact zeros and NaNs (sparse feature maps
never materialize absent entries, so zero doubles as "missing" and the
tree learns which way to send it). Codes 1..k index value bins whose
upper bounds come from training-set quantiles of the nonzero values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Binner"]


@dataclass
class Binner:
    max_bins: int = 255

    def __post_init__(self):
        if not 1 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [1, 255]")
        self.uppers_: list[np.ndarray] = []

    @property
    def n_features(self) -> int:
        return len(self.uppers_)

    def fit(self, X: np.ndarray) -> "Binner":
        """Learn per-feature bin upper bounds from training data."""
        self.uppers_ = []
        for f in range(X.shape[1]):
            col = X[:, f]
            nonzero = col[(col != 0.0) & np.isfinite(col)]
            if nonzero.size == 0:
                self.uppers_.append(np.empty(0, dtype=np.float64))
                continue
            distinct = np.unique(nonzero)
            if distinct.size <= self.max_bins:
                uppers = distinct.astype(np.float64)
            else:
                qs = np.quantile(nonzero, np.linspace(0.0, 1.0, self.max_bins + 1)[1:])
                uppers = np.unique(qs)
            self.uppers_.append(uppers)
        return self

    def n_bins(self) -> np.ndarray:
        return np.array([u.size for u in self.uppers_], dtype=np.int32)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Feature-major (F, N) uint16 codes; values above the top bin clamp."""
        if X.shape[1] != self.n_features:
            raise ValueError("feature count mismatch with fitted binner")
        codes = np.zeros((X.shape[1], X.shape[0]), dtype=np.uint16)
        for f, uppers in enumerate(self.uppers_):
            if uppers.size == 0:
                continue
            col = X[:, f]
            idx = np.searchsorted(uppers, col, side="left").astype(np.int64) + 1
            np.minimum(idx, uppers.size, out=idx)
            idx[(col == 0.0) | ~np.isfinite(col)] = 0
            codes[f] = idx.astype(np.uint16)
        return codes

    def threshold_for(self, feature: int, bin_index: int) -> float:
        """Raw-value split threshold for "codes <= bin_index goes left".

        bin_index 0 means only the zero bin goes left, encoded as -inf
        so no finite value ever routes left through the comparison.
        """
        if bin_index == 0:
            return float("-inf")
        return float(self.uppers_[feature][bin_index - 1])
