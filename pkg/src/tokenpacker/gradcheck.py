"""Finite-difference verification of the projector's analytic gradients.

The numeric side only ever calls ``forward``; it shares nothing with
``backward``, so agreement between the two is a real check. Relative error
uses max(|analytic|, |numeric|) as the denominator; entries where both
magnitudes sit below the 1e-8 floor count as exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fileio import synth_features
from .projector import ProjectorConfig, backward, forward, init_weights
from .tensor import Array, Rng

TOLERANCE = 1e-4
_FLOOR = 1e-8


def numeric_gradient(loss_fn, param: Array, eps: float) -> Array:
    """Central finite differences of loss_fn w.r.t. every entry of param (in place)."""
    grad = np.zeros_like(param)
    flat, grad_flat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        plus = loss_fn()
        flat[i] = saved - eps
        minus = loss_fn()
        flat[i] = saved
        grad_flat[i] = (plus - minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: Array, numeric: Array) -> float:
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    rel = np.where(denom > _FLOOR, err / np.maximum(denom, _FLOOR), 0.0)
    return float(np.max(rel)) if rel.size else 0.0


@dataclass(frozen=True)
class GradCheckResult:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def run_gradcheck(
    cfg: ProjectorConfig | None = None,
    seed: int = 0,
    eps: float = 1e-5,
    corrupt_section: str | None = None,
) -> GradCheckResult:
    """Compare analytic and finite-difference gradients tensor by tensor.

    ``corrupt_section`` deliberately scales one analytic gradient so the
    harness can prove it would catch a broken backward pass.
    """
    if cfg is None:
        cfg = ProjectorConfig(channels=8, grid_h=4, grid_w=4, scale=2, out_dim=8, levels=2)
    weights = init_weights(cfg, Rng(seed))
    feats = synth_features(seed + 1, cfg.grid_h, cfg.grid_w, cfg.channels, cfg.levels)
    upstream = Rng(seed + 2).uniform(-1.0, 1.0, (cfg.tokens, cfg.out_dim))

    grads = backward(cfg, weights, feats, upstream)

    def loss() -> float:
        return float(np.sum(upstream * forward(cfg, weights, feats)))

    checks: dict[str, tuple[Array, Array]] = {
        name: (getattr(weights, name), getattr(grads, name))
        for name in (
            "w_q", "w_k", "w_v", "w_o",
            "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
            "w_out", "b_out",
        )
    }
    if cfg.query_mode == "learnable":
        checks["learnable_query"] = (weights.learnable_query, grads.learnable_query)
    for i, level in enumerate(feats.levels):
        checks[f"level_{i}"] = (level, grads.levels[i])
    checks["query_source"] = (feats.query_source, grads.query_source)

    errors: dict[str, float] = {}
    for name, (param, analytic) in checks.items():
        if corrupt_section == name:
            analytic = analytic * 1.01
        errors[name] = max_relative_error(analytic, numeric_gradient(loss, param, eps))
    return GradCheckResult(errors=errors, tolerance=TOLERANCE)
