"""Fusion of per-perspective gradient fields.

Three operators combine the map-perspective gradients into a single field:

* sparse perspective selection -- FISTA on an l1-regularized least squares
  problem over one weight per perspective, fitting the weighted average of
  isotropic gradient magnitudes to their plain average;
* gradient denoising -- element-wise FISTA per component whose fixed point is
  plain soft-thresholding (the fidelity is the identity quadratic);
* the weighted per-cell average itself, normalized by the sum of the weights
  active at each cell so that cells seen by fewer perspectives are not dimmed.

Invalid gradient components are skipped throughout.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .gradients import GradientField, gradient_magnitude
from .perspectives import PerspectiveKey, PerspectiveSet
from .validation import check_same_spec

log = logging.getLogger(__name__)

# Relative-step stopping threshold shared by the FISTA loops.
REL_STEP_TOL = 1e-6


@dataclass(frozen=True)
class FusionConfig:
    """Parameters of the selection and denoising solvers.

    ``lam`` is the sparsity strength of the weight-selection objective,
    ``gamma`` the gradient step and ``tau`` the per-iteration soft threshold.
    The proximal step of the l1 penalty with step ``gamma`` is eta_{gamma*lam};
    ``tau`` is taken as given, but a mismatch with ``gamma * lam`` means the
    iteration effectively minimizes with sparsity strength ``tau / gamma`` and
    a warning is emitted.  Defaults are the reference operating point.
    """

    lam: float = 1.2e-3
    gamma: float = 1e-3
    tau: float = 2.3e-3
    max_iters: int = 100
    denoise: bool = False
    denoise_tau: float = 2.3e-3
    denoise_gamma: float = 1e-3
    denoise_max_iters: int = 100

    def __post_init__(self):
        for name in ("gamma", "denoise_gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        # Zero sparsity (lam = tau = 0) is legal and reduces to exact fitting.
        for name in ("lam", "tau", "denoise_tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.max_iters < 1 or self.denoise_max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class WeightVector:
    """One scalar weight per perspective, in canonical key order."""

    keys: tuple[PerspectiveKey, ...]
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "keys", tuple(self.keys))
        if w.shape != (len(self.keys),):
            raise ValueError("one weight per key required")

    @classmethod
    def uniform(cls, keys, value: float = 1.0) -> "WeightVector":
        keys = tuple(sorted(keys))
        return cls(keys, np.full(len(keys), float(value)))

    def as_dict(self) -> dict[PerspectiveKey, float]:
        return {k: float(w) for k, w in zip(self.keys, self.weights)}

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))


def soft_threshold(x, tau: float):
    """Element-wise sgn(x) * max(|x| - tau, 0), the proximal map of the l1 norm."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def perspective_gradients(pset: PerspectiveSet) -> dict[PerspectiveKey, GradientField]:
    """Forward-difference gradient of every map-perspective, canonical order."""
    from .gradients import gradient

    return {key: gradient(pset[key].cell_map) for key in pset.keys()}


def _magnitude_matrix(grads: Mapping[PerspectiveKey, GradientField]):
    """Rows = per-perspective isotropic magnitude vectors (0 where invalid)."""
    keys = sorted(grads.keys())
    spec = check_same_spec(*(grads[k] for k in keys))
    mags = np.stack([gradient_magnitude(grads[k]).vector() for k in keys])
    return keys, spec, mags


def stable_step_size(grads: Mapping[PerspectiveKey, GradientField], safety: float = 0.9) -> float:
    """A step size below the stability bound of the weight-selection FISTA.

    The fidelity Hessian is the Gram matrix of the magnitude vectors; its
    largest eigenvalue depends on the data scale, so a fixed step is not
    universally stable.  Returns ``safety / lambda_max``.
    """
    _, _, mags = _magnitude_matrix(grads)
    gram = mags @ mags.T
    lam_max = float(np.linalg.eigvalsh(gram)[-1])
    if lam_max <= 0:
        return 1.0
    return safety / lam_max


def clamp_step(
    cfg: FusionConfig,
    grads: Mapping[PerspectiveKey, GradientField],
    safety: float = 0.9,
) -> FusionConfig:
    """Config with the selection step reduced to the stable bound when needed.

    The sparsity strength ``tau / gamma`` is preserved, so the minimizer the
    iteration targets does not change; only the step size does.  Useful when
    running with literature constants on data whose scale they were not
    tuned for.
    """
    stable = stable_step_size(grads, safety)
    if cfg.gamma <= stable:
        return cfg
    log.warning(
        "selection step gamma=%g exceeds the stable bound %g; clamping "
        "(sparsity strength tau/gamma preserved)",
        cfg.gamma,
        stable,
    )
    return dataclasses.replace(cfg, gamma=stable, tau=stable * (cfg.tau / cfg.gamma))


def select_weights(
    grads: Mapping[PerspectiveKey, GradientField],
    cfg: FusionConfig,
    return_info: bool = False,
):
    """Sparse perspective selection via FISTA.

    Minimizes ``0.5 * || sum_phi |g^phi| - sum_phi w_phi |g^phi| ||^2`` plus an
    l1 penalty on the weights, where ``|g^phi|`` is the per-cell isotropic
    magnitude vector of perspective ``phi`` (invalid components skipped).
    Iterates a gradient step at the momentum point followed by
    soft-thresholding with ``cfg.tau`` and the Nesterov q-sequence, starting
    from all-zero weights, until the relative step falls below 1e-6 or
    ``cfg.max_iters`` is reached.

    Returns the final (proximal) weight iterate; with ``return_info`` also a
    dict holding the iteration count, the composite objective values at the
    returned weights, at zero and at all-ones, and the effective sparsity
    strength.
    """
    if not grads:
        raise ValueError("perspective set is empty")
    if abs(cfg.tau - cfg.gamma * cfg.lam) > 1e-15:
        warnings.warn(
            f"tau={cfg.tau:g} differs from gamma*lam={cfg.gamma * cfg.lam:g}; "
            f"the iteration minimizes with effective sparsity strength tau/gamma="
            f"{cfg.tau / cfg.gamma:g}",
            stacklevel=2,
        )

    keys, _, mags = _magnitude_matrix(grads)
    n = len(keys)
    gram = mags @ mags.T                     # fidelity Hessian, n x n
    target = gram @ np.ones(n)               # A^T (A 1)

    def fidelity_grad(w):
        return gram @ w - target

    s_prev = np.zeros(n)
    momentum = s_prev.copy()
    q_prev = 1.0
    iters = 0
    for t in range(1, cfg.max_iters + 1):
        s = soft_threshold(momentum - cfg.gamma * fidelity_grad(momentum), cfg.tau)
        # A step above the stability bound makes the iterates blow up long
        # before they overflow to inf, so also treat runaway growth as
        # divergence.
        if not np.isfinite(s).all() or np.abs(s).max() > 1e100:
            raise RuntimeError(
                f"weight selection diverged at iteration {t}; "
                f"reduce gamma (see stable_step_size)"
            )
        q = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * q_prev * q_prev))
        momentum = s + ((q_prev - 1.0) / q) * (s - s_prev)
        step = np.linalg.norm(s - s_prev)
        denom = max(np.linalg.norm(s_prev), 1e-30)
        iters = t
        s_prev, q_prev = s, q
        if np.isfinite(step) and step / denom < REL_STEP_TOL:
            break

    w = s_prev
    # Convergence sanity against the objective the prox iteration targets.
    lam_eff = cfg.tau / cfg.gamma

    def objective(v):
        r = mags.T @ v - mags.sum(axis=0)
        return 0.5 * float(r @ r) + lam_eff * float(np.abs(v).sum())

    obj_w, obj_zero, obj_ones = objective(w), objective(np.zeros(n)), objective(np.ones(n))
    if obj_w > obj_zero + 1e-9 or obj_w > obj_ones + 1e-9:
        log.warning(
            "weight selection did not reach a competitive objective "
            "(f(w)=%.6g, f(0)=%.6g, f(1)=%.6g); consider more iterations or a "
            "smaller step", obj_w, obj_zero, obj_ones,
        )

    result = WeightVector(tuple(keys), w)
    if return_info:
        return result, {
            "iterations": iters,
            "objective": obj_w,
            "objective_at_zero": obj_zero,
            "objective_at_ones": obj_ones,
            "effective_lambda": lam_eff,
        }
    return result


def denoise_gradient(g: GradientField, cfg: FusionConfig) -> GradientField:
    """Soft-threshold denoising of each gradient component via FISTA.

    Each component independently minimizes ``0.5 * ||g_k - s||^2`` plus an l1
    penalty; because the fidelity is the identity quadratic the fixed point is
    ``soft_threshold(g_k, denoise_tau / denoise_gamma)`` and the iteration
    converges to it.  Invalid entries are left untouched and stay invalid.
    """
    out = {}
    for comp, valid in (("gx", g.valid_x), ("gy", g.valid_y)):
        data = getattr(g, comp)
        s_prev = data.copy()
        momentum = s_prev.copy()
        q_prev = 1.0
        for _ in range(cfg.denoise_max_iters):
            s = soft_threshold(momentum - cfg.denoise_gamma * (momentum - data), cfg.denoise_tau)
            q = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * q_prev * q_prev))
            momentum = s + ((q_prev - 1.0) / q) * (s - s_prev)
            step = np.linalg.norm(s - s_prev)
            denom = max(np.linalg.norm(s_prev), 1e-30)
            s_prev, q_prev = s, q
            if step / denom < REL_STEP_TOL:
                break
        out[comp] = np.where(valid, s_prev, data)
    return GradientField(g.spec, out["gx"], out["gy"], g.valid_x, g.valid_y)


def fuse(
    grads: Mapping[PerspectiveKey, GradientField],
    weights: WeightVector,
    cfg: FusionConfig | None = None,
) -> GradientField:
    """Weighted per-cell average of perspective gradients.

    Per component and cell the result is ``sum_phi w_phi g^phi / sum_phi w_phi``
    over the perspectives with a valid component there; the normalization keeps
    cells covered by fewer perspectives unbiased.  A cell component is invalid
    when no perspective sees it or the active weights sum to zero.  With
    ``cfg.denoise`` each perspective gradient passes through
    :func:`denoise_gradient` first.  Perspectives are accumulated in canonical
    key order, so the result does not depend on enumeration order.
    """
    if not grads:
        raise ValueError("perspective set is empty")
    cfg = cfg or FusionConfig()
    wmap = weights.as_dict()
    missing = [k for k in grads.keys() if k not in wmap]
    if missing:
        raise ValueError(f"weight vector is missing {len(missing)} perspective(s), e.g. {missing[0]}")

    keys = sorted(grads.keys())
    spec = check_same_spec(*(grads[k] for k in keys))
    num_x = np.zeros(spec.shape)
    num_y = np.zeros(spec.shape)
    den_x = np.zeros(spec.shape)
    den_y = np.zeros(spec.shape)
    any_x = np.zeros(spec.shape, dtype=bool)
    any_y = np.zeros(spec.shape, dtype=bool)

    for key in keys:
        g = grads[key]
        if cfg.denoise:
            g = denoise_gradient(g, cfg)
        w = wmap[key]
        num_x += np.where(g.valid_x, w * g.gx, 0.0)
        num_y += np.where(g.valid_y, w * g.gy, 0.0)
        den_x += np.where(g.valid_x, w, 0.0)
        den_y += np.where(g.valid_y, w, 0.0)
        any_x |= g.valid_x
        any_y |= g.valid_y

    valid_x = any_x & (den_x != 0.0)
    valid_y = any_y & (den_y != 0.0)
    gx = np.divide(num_x, den_x, out=np.zeros(spec.shape), where=valid_x)
    gy = np.divide(num_y, den_y, out=np.zeros(spec.shape), where=valid_y)
    return GradientField(spec, gx, gy, valid_x, valid_y)


def fuse_uniform(grads: Mapping[PerspectiveKey, GradientField], cfg: FusionConfig | None = None) -> GradientField:
    """Plain per-cell mean of the perspective gradients (all weights 1)."""
    return fuse(grads, WeightVector.uniform(grads.keys()), cfg)
