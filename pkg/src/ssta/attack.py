"""Salient spatially transformed attack and the additive L-inf PGD baseline.

The spatial attack optimizes a flow field with AdamW, confined to a saliency
mask and clamped to a displacement budget.  When a stage of ``stage_iters``
steps fails, the saliency threshold is lowered (growing the region) and the
budget is enlarged, keeping the flow and optimizer state.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import NumericalError
from .nn import Network
from .saliency import IMPORTED_TAU, SALIENCY_METHODS, Mask, threshold_mask
from .warp import MaskedWarp, apply_flow, project_flow, zero_flow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamWParams:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class AttackConfig:
    """Schedule and optimizer settings for :func:`ssta_attack`.

    ``xi_*`` values are displacement budgets in pixels; ``tau_*`` are 8-bit
    saliency levels.
    """

    tau_init: int = 250
    tau_step: int = 25
    tau_min: int = 50
    xi_init: float = 1e-2
    xi_growth: float = 2.0
    xi_max: float = 2.0
    stage_iters: int = 50
    max_iters: int = 500
    kappa: float = 0.0
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    saliency_method: str = "ft"

    def __post_init__(self):
        if not 0 <= self.tau_min <= self.tau_init <= 255:
            raise ValueError(f"need 0 <= tau_min <= tau_init <= 255, got {self.tau_min}, {self.tau_init}")
        if self.tau_step < 0:
            raise ValueError("tau_step must be non-negative")
        if not self.xi_init > 0:
            raise ValueError("xi_init must be positive")
        if self.xi_growth < 1:
            raise ValueError("xi_growth must be at least 1")
        if self.xi_max < self.xi_init:
            raise ValueError("xi_max must be at least xi_init")
        if self.stage_iters < 1:
            raise ValueError("stage_iters must be at least 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.saliency_method not in ("ft", "lc", "imported"):
            raise ValueError(f"unknown saliency method {self.saliency_method!r}")

    @property
    def adamw(self) -> AdamWParams:
        return AdamWParams(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: type(f.default) for f in fields(cls)}

    def updated(self, **overrides) -> "AttackConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    flow: np.ndarray
    mask: Mask
    success: bool
    iterations_used: int
    final_loss: float
    final_tau: int
    final_xi: float
    predicted_class: int
    method: str = "ssta"
    history: list = field(default_factory=list, repr=False)


def is_fooled(logits, y: int) -> bool:
    """True when some other class strictly beats the true class (ties favor ``y``)."""
    others = np.delete(np.asarray(logits), y)
    return bool(others.max() > logits[y])


def _check_class(logits, y):
    if not 0 <= y < len(logits):
        raise ValueError(f"class index {y} out of range for {len(logits)} classes")
    if len(logits) < 2:
        raise ValueError("margin loss needs at least two classes")


def margin_loss(logits, y: int, kappa: float = 0.0) -> float:
    """``max(logit_y - max_{k != y} logit_k, -kappa)``; minimized by the attacks."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_class(logits, y)
    return float(max(logits[y] - np.delete(logits, y).max(), -kappa))


def margin_loss_and_grad(logits, y: int, kappa: float = 0.0):
    """Margin loss and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_class(logits, y)
    others = logits.copy()
    others[y] = -np.inf
    k = int(np.argmax(others))
    margin = logits[y] - logits[k]
    grad = np.zeros_like(logits)
    if margin > -kappa:
        grad[y], grad[k] = 1.0, -1.0
    return float(max(margin, -kappa)), grad


def adamw_step(state: OptimizerState, params, grads, hp: AdamWParams = AdamWParams()):
    """One AdamW update with decoupled weight decay; returns ``(state, params)``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} does not match parameters {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient passed to AdamW")
    step = state.step + 1
    m = hp.beta1 * state.m + (1 - hp.beta1) * grads
    v = hp.beta2 * state.v + (1 - hp.beta2) * grads**2
    m_hat = m / (1 - hp.beta1**step)
    v_hat = v / (1 - hp.beta2**step)
    new = params * (1 - hp.lr * hp.weight_decay) - hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)
    return OptimizerState(m, v, step), new


def _loss_fn(y, kappa):
    return lambda logits: margin_loss_and_grad(logits, y, kappa)


def _evaluate(net, x_adv, y, kappa):
    value, logits, grad = net.value_and_input_grad(x_adv, _loss_fn(y, kappa))
    if not np.isfinite(value):
        raise NumericalError("non-finite attack loss")
    return value, logits, grad


def ssta_attack(net: Network, x, y: int, cfg: AttackConfig = AttackConfig(), *, mask: Mask | None = None, saliency=None) -> AttackResult:
    """Craft an adversarial example by warping the salient region of ``x``.

    Parameters
    ----------
    net : Network
        Victim classifier.
    x : ndarray
        Clean ``(H, W, C)`` image.
    y : int
        True class of ``x``.
    cfg : AttackConfig
        Schedule and optimizer settings.
    mask : Mask, optional
        Fixed region to perturb; required when ``cfg.saliency_method`` is
        ``"imported"``.  The threshold schedule is then inactive.
    saliency : ndarray, optional
        Precomputed saliency map, used instead of ``cfg.saliency_method``.

    Returns
    -------
    AttackResult
        On success, the first iterate that fools ``net``; otherwise the
        lowest-loss iterate seen.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[:2]
    hp = cfg.adamw
    imported = mask is not None
    if cfg.saliency_method == "imported" and not imported:
        raise ValueError("saliency_method 'imported' requires a mask")
    if imported:
        if mask.shape != (h, w):
            raise ValueError(f"mask shape {mask.shape} does not match image {(h, w)}")
        smap = None
        tau = IMPORTED_TAU
    else:
        smap = saliency if saliency is not None else SALIENCY_METHODS[cfg.saliency_method](x)
        tau = cfg.tau_init
        mask = threshold_mask(smap, tau)
    xi = cfg.xi_init
    flow = zero_flow(h, w)
    state = OptimizerState.zeros_like(flow)

    def result(x_adv, f, m, ok, loss, t, budget, logits, iters):
        return AttackResult(x_adv, f, m, ok, iters, loss, t, budget, int(np.argmax(logits)), "ssta")

    loss, logits, _ = _evaluate(net, x, y, cfg.kappa)
    if is_fooled(logits, y):
        return result(x.copy(), flow, mask, True, loss, tau, xi, logits, 0)
    best = (loss, x.copy(), flow.copy(), mask, tau, xi, logits)

    it = 0
    while it < cfg.max_iters:
        if not mask.is_empty:
            for _ in range(cfg.stage_iters):
                if it >= cfg.max_iters:
                    break
                mw = MaskedWarp(x, flow, mask)
                x_adv = mw.output
                loss, logits, gx = _evaluate(net, x_adv, y, cfg.kappa)
                if is_fooled(logits, y):
                    return result(x_adv, flow, mask, True, loss, tau, xi, logits, it)
                if loss < best[0]:
                    best = (loss, x_adv, flow.copy(), mask, tau, xi, logits)
                g = mw.flow_gradient(gx)
                state, flow = adamw_step(state, flow, g, hp)
                flow = project_flow(flow, xi)
                it += 1
        elif imported or tau == cfg.tau_min:
            break  # region can no longer grow
        # stage failed: widen the region and the budget
        xi = min(xi * cfg.xi_growth, cfg.xi_max)
        if not imported:
            tau = max(tau - cfg.tau_step, cfg.tau_min)
            mask = threshold_mask(smap, tau)
        log.debug("stage failed after %d iterations: tau=%s xi=%.4g", it, tau, xi)

    if it > 0:
        # the last update has not been scored yet
        x_adv = apply_flow(x, flow, mask)
        loss, logits, _ = _evaluate(net, x_adv, y, cfg.kappa)
        if is_fooled(logits, y):
            return result(x_adv, flow, mask, True, loss, tau, xi, logits, it)
        if loss < best[0]:
            best = (loss, x_adv, flow.copy(), mask, tau, xi, logits)
    b_loss, b_x, b_flow, b_mask, b_tau, b_xi, b_logits = best
    return result(b_x, b_flow, b_mask, False, b_loss, b_tau, b_xi, b_logits, it)


def pgd_baseline(net: Network, x, y: int, eps: float, steps: int, step_size: float, kappa: float = 0.0) -> AttackResult:
    """Additive L-inf attack: sign-gradient descent on the margin loss.

    Starts from zero noise and stops at the first iterate that fools ``net``.
    """
    if eps < 0 or steps < 0:
        raise ValueError("eps and steps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[:2]
    full = Mask.full((h, w))
    delta = np.zeros_like(x)
    x_adv = x.copy()

    def result(ok, loss, logits, iters):
        return AttackResult(x_adv, zero_flow(h, w), full, ok, iters, loss, 0, 0.0, int(np.argmax(logits)), "pgd")

    for it in range(steps + 1):
        loss, logits, gx = _evaluate(net, x_adv, y, kappa)
        if is_fooled(logits, y) or it == steps:
            return result(is_fooled(logits, y), loss, logits, it)
        delta = np.clip(delta - step_size * np.sign(gx), -eps, eps)
        x_adv = np.clip(x + delta, 0.0, 1.0)
