"""Batch evaluation: run attacks over image sets and turn results into records.

Worker processes receive the model path and config once and then attack
single images; results are merged in input order, so aggregates do not
depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig, AttackResult, pgd_baseline, ssta_attack
from .metrics import metric_report
from .nn import load_weights
from .saliency import mask_area_fraction

PGD_LEVELS = (1, 2, 4, 8)  # budgets in 8-bit levels
PGD_STEPS = 40
TARGET_ASR = 0.95


@dataclass(frozen=True)
class PGDSettings:
    """``eps`` in 8-bit levels; each sign step moves ``eps / step_divisor``."""

    eps: float
    steps: int = PGD_STEPS
    step_divisor: float = 10.0

    def run(self, net, x, y) -> AttackResult:
        eps = self.eps / 255.0
        return pgd_baseline(net, x, y, eps, self.steps, eps / self.step_divisor)


def attack_record(index, name, label, pred_before, x, result: AttackResult, outputs=None) -> dict:
    """JSON-ready summary of one attack: outcome, schedule state and metrics."""
    return {
        "index": int(index),
        "input": name,
        "label": int(label),
        "pred_before": int(pred_before),
        "pred_after": int(result.predicted_class),
        "method": result.method,
        "success": bool(result.success),
        "iterations": int(result.iterations_used),
        "final_loss": float(result.final_loss),
        "final_tau": int(result.final_tau),
        "final_xi": float(result.final_xi),
        "mask_area": mask_area_fraction(result.mask),
        "metrics": metric_report(x, result.x_adv).to_dict(),
        "outputs": dict(outputs or {}),
    }


# per-process state for the worker pool
_STATE: dict = {}


def _init_worker(model_path, cfg_dict, pgd):
    _STATE["net"] = load_weights(model_path)
    _STATE["cfg"] = AttackConfig(**cfg_dict)
    _STATE["pgd"] = pgd


def _attack_task(task):
    x, y = task
    net, cfg, pgd = _STATE["net"], _STATE["cfg"], _STATE["pgd"]
    res = pgd.run(net, x, y) if pgd is not None else ssta_attack(net, x, y, cfg)
    return res


def run_batch(model_path, images, labels, cfg: AttackConfig, *, pgd: PGDSettings | None = None, workers=1):
    """Attack every ``(image, label)`` pair; returns results in input order.

    With ``pgd`` set the additive baseline runs instead of the spatial attack.
    """
    tasks = [(np.asarray(x, dtype=np.float64), int(y)) for x, y in zip(images, labels)]
    init = (str(model_path), cfg.to_dict(), pgd)
    if workers <= 1:
        _init_worker(*init)
        try:
            return [_attack_task(t) for t in tasks]
        finally:
            _STATE.clear()
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=init) as pool:
        return list(pool.map(_attack_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def success_rate(results) -> float:
    results = list(results)
    return sum(r.success for r in results) / len(results) if results else 0.0


def pgd_ladder(run, levels=PGD_LEVELS, *, steps=PGD_STEPS, target=TARGET_ASR):
    """Smallest budget in ``levels`` whose success rate reaches ``target``.

    ``run`` maps a :class:`PGDSettings` to the list of attack results.
    Returns ``(settings, results, rates)`` where ``rates`` maps every tried
    level to its success rate.  Levels are tried in increasing order and the
    search stops at the first one that qualifies; if none does, the largest
    is returned.
    """
    rates = {}
    for level in sorted(levels):
        settings = PGDSettings(float(level), steps)
        results = run(settings)
        rates[level] = success_rate(results)
        if rates[level] >= target:
            break
    return settings, results, rates
