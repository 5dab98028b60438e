"""Estimator-style wrappers over the pipeline stages.

The underlying operations are plain functions on domain objects; these
classes package them behind the familiar fit/transform/predict workflow so
the stages compose with standard tooling (parameter grids, cloning,
``get_params``).  The X arguments are domain objects rather than feature
matrices: a PerspectiveSet, a GradientField or a CellMap depending on the
stage.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .fusion import (
    FusionConfig,
    WeightVector,
    clamp_step,
    fuse,
    perspective_gradients,
    select_weights,
)
from .gradients import GradientField
from .grid import CellMap
from .localize import Pose, SearchWindow, register
from .perspectives import PerspectiveSet, union_occupancy
from .reconstruct import ReconstructionConfig, boundary_set, choose_reference, poisson_reconstruct
from .segment import extract_markings, otsu_threshold
from .validation import check_type


class GradientFusion(BaseEstimator, TransformerMixin):
    """Learn per-perspective weights, then fuse gradient fields.

    ``mode`` is either "uniform" (all weights 1) or "select" (sparse FISTA
    selection).  fit expects a PerspectiveSet; transform fuses the gradients
    of the given set (usually the same one) with the learned weights.
    """

    def __init__(
        self,
        mode: str = "select",
        lam: float = 1.2e-3,
        gamma: float = 1e-3,
        tau: float = 2.3e-3,
        max_iters: int = 100,
        denoise: bool = False,
        denoise_tau: float = 2.3e-3,
        denoise_gamma: float = 1e-3,
        denoise_max_iters: int = 100,
        auto_step: bool = True,
    ):
        self.mode = mode
        self.lam = lam
        self.gamma = gamma
        self.tau = tau
        self.max_iters = max_iters
        self.denoise = denoise
        self.denoise_tau = denoise_tau
        self.denoise_gamma = denoise_gamma
        self.denoise_max_iters = denoise_max_iters
        self.auto_step = auto_step

    def _config(self) -> FusionConfig:
        return FusionConfig(
            lam=self.lam,
            gamma=self.gamma,
            tau=self.tau,
            max_iters=self.max_iters,
            denoise=self.denoise,
            denoise_tau=self.denoise_tau,
            denoise_gamma=self.denoise_gamma,
            denoise_max_iters=self.denoise_max_iters,
        )

    def fit(self, X: PerspectiveSet, y=None):
        check_type(X, PerspectiveSet, "X")
        if self.mode not in ("uniform", "select"):
            raise ValueError(f"mode must be 'uniform' or 'select', got {self.mode!r}")
        grads = perspective_gradients(X)
        if self.mode == "uniform":
            self.weights_ = WeightVector.uniform(grads.keys())
            self.selection_info_ = None
        else:
            cfg = self._config()
            if self.auto_step:
                cfg = clamp_step(cfg, grads)
            self.weights_, self.selection_info_ = select_weights(
                grads, cfg, return_info=True
            )
        self.n_selected_ = self.weights_.n_nonzero
        return self

    def transform(self, X: PerspectiveSet) -> GradientField:
        check_is_fitted(self, "weights_")
        check_type(X, PerspectiveSet, "X")
        return fuse(perspective_gradients(X), self.weights_, self._config())


class PoissonReconstructor(BaseEstimator, TransformerMixin):
    """Learn the reference boundary from a PerspectiveSet, then reconstruct.

    fit picks the reference perspective and its Dirichlet cells and records
    the union occupancy; transform solves the Poisson system for a fused
    GradientField.  Solver diagnostics of the last transform are kept in
    ``info_``.
    """

    def __init__(
        self,
        gamma: float = 1.0 / 8.0,
        max_iters: int = 256,
        rel_tol: float = 1e-3,
        boundary_bin_width: float = 1.0,
    ):
        self.gamma = gamma
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.boundary_bin_width = boundary_bin_width

    def fit(self, X: PerspectiveSet, y=None):
        check_type(X, PerspectiveSet, "X")
        self.reference_key_ = choose_reference(X)
        self.boundary_ = boundary_set(
            X[self.reference_key_].cell_map,
            bin_width=self.boundary_bin_width,
            key=self.reference_key_,
        )
        self.omega_ = union_occupancy(X)
        return self

    def transform(self, X: GradientField) -> CellMap:
        check_is_fitted(self, "boundary_")
        check_type(X, GradientField, "X")
        cfg = ReconstructionConfig(
            gamma=self.gamma, max_iters=self.max_iters, rel_tol=self.rel_tol
        )
        result, self.info_ = poisson_reconstruct(
            X, self.boundary_, self.omega_, cfg, return_info=True
        )
        return result


class NmiLocalizer(BaseEstimator):
    """Hold a prior magnitude map; predict the pose of a local patch."""

    def __init__(
        self,
        bins: int = 64,
        dx_range: float = 1.0,
        dy_range: float = 1.0,
        heading_range: float = 0.03,
        dx_step: float = 0.1,
        dy_step: float = 0.1,
        heading_step: float = 0.005,
    ):
        self.bins = bins
        self.dx_range = dx_range
        self.dy_range = dy_range
        self.heading_range = heading_range
        self.dx_step = dx_step
        self.dy_step = dy_step
        self.heading_step = heading_step

    def fit(self, X: CellMap, y=None):
        check_type(X, CellMap, "X")
        self.prior_ = X
        return self

    def predict(self, X: CellMap) -> Pose:
        check_is_fitted(self, "prior_")
        check_type(X, CellMap, "X")
        window = SearchWindow(
            dx_range=self.dx_range,
            dy_range=self.dy_range,
            heading_range=self.heading_range,
            dx_step=self.dx_step,
            dy_step=self.dy_step,
            heading_step=self.heading_step,
        )
        self.result_ = register(self.prior_, X, window, bins=self.bins)
        return self.result_.pose

    def score(self, X: CellMap, y=None) -> float:
        """Registration score (NMI) of the best pose for X."""
        self.predict(X)
        return self.result_.score


class MarkingExtractor(BaseEstimator, TransformerMixin):
    """Learn an intensity threshold on fit, apply it on transform."""

    def __init__(self, method: str = "otsu", threshold: float | None = None):
        self.method = method
        self.threshold = threshold

    def fit(self, X: CellMap, y=None):
        check_type(X, CellMap, "X")
        if self.method == "otsu":
            self.threshold_ = otsu_threshold(X)
        elif self.method == "fixed":
            if self.threshold is None:
                raise ValueError("fixed method requires a threshold")
            self.threshold_ = float(self.threshold)
        else:
            raise ValueError(f"unknown method {self.method!r}; choose 'otsu' or 'fixed'")
        return self

    def transform(self, X: CellMap):
        check_is_fitted(self, "threshold_")
        check_type(X, CellMap, "X")
        return extract_markings(X, method="fixed", threshold=self.threshold_)
