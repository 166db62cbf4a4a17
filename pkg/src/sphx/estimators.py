"""scikit-learn style wrapper around the neighbor-search backends."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .fp16 import Precision
from .grid import CellGrid, normalize_domain, rebin, to_relative
from .model import Domain, ParticleSystem
from .nnps import NeighborTable, all_list, cell_link_list, rcll

__all__ = ["FixedRadiusNeighbors"]

_BACKENDS = ("all", "cell", "rcll")


class FixedRadiusNeighbors(BaseEstimator):
    """Fixed-radius neighbors of a point set, found at a chosen precision.

    Parameters
    ----------
    radius : float
        Strict search radius; pairs with distance ``< radius`` are neighbors.
    backend : {"all", "cell", "rcll"}
    precision : {"fp64", "fp32", "fp16"}
    lo, hi : array-like, optional
        Domain bounds. Default to the bounding box of the fitted points.
    periodic : tuple of bool, optional

    Attributes
    ----------
    table_ : NeighborTable
        Neighbors among the fitted points.
    n_features_in_ : int
    """

    def __init__(self, radius=1.0, backend="cell", precision="fp64", lo=None, hi=None,
                 periodic=None):
        self.radius = radius
        self.backend = backend
        self.precision = precision
        self.lo = lo
        self.hi = hi
        self.periodic = periodic

    def _validate_params(self):
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius!r}")
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}, got {self.backend!r}")
        return Precision.parse(self.precision)

    def _domain(self, X) -> Domain:
        lo = np.min(X, axis=0) if self.lo is None else np.asarray(self.lo, float)
        hi = np.max(X, axis=0) if self.hi is None else np.asarray(self.hi, float)
        hi = np.where(hi > lo, hi, lo + self.radius)
        return Domain(tuple(lo), tuple(hi), tuple(self.periodic or ()))

    def fit(self, X, y=None):
        prec = self._validate_params()
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if X.shape[1] > 3:
            raise ValueError(f"at most 3 features are supported, got {X.shape[1]}")
        dom = self._domain(X)
        # ds only sets h; the radius is passed explicitly
        ps = ParticleSystem.at_rest(dom, X, ds=self.radius / 2.4, h=self.radius / 2.0)
        if self.backend == "all":
            table = all_list(ps, prec, cutoff=self.radius)
        else:
            grid = rebin(ps, CellGrid(dom, self.radius))
            if self.backend == "cell":
                table = cell_link_list(ps, grid, prec)
            else:
                rel = to_relative(normalize_domain(ps.x, dom), grid, prec)
                table = rcll(rel, grid, prec)
        self.table_: NeighborTable = table
        self.n_features_in_ = X.shape[1]
        return self

    def radius_neighbors(self):
        """Per-point neighbor index arrays of the fitted set."""
        check_is_fitted(self, "table_")
        return [self.table_[i].copy() for i in range(self.table_.n)]

    def radius_neighbors_graph(self):
        """Sparse adjacency of the fitted set as a CSR matrix."""
        check_is_fitted(self, "table_")
        return self.table_.to_csr()

    def fit_transform(self, X, y=None):
        return self.fit(X).radius_neighbors_graph()
