"""
L-BFGS 最適化モジュール
2ループ再帰による探索方向と Armijo バックトラッキングで、拡張実数値の目的関数を最小化する

目的関数が +∞ を返す試行点や accept 述語で棄却された試行点ではステップを縮小する。
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from app.config.constants import (
    ARMIJO_C1,
    BACKTRACK_FACTOR,
    LBFGS_HISTORY,
    LBFGS_MAX_ITERATIONS,
    LBFGS_TOLERANCE,
    MIN_STEP,
)
from app.exceptions import LineSearchFailure, NonFiniteEnergy

logger = logging.getLogger(__name__)

# 受理された反復でのエネルギー減少がこの相対量以下なら停滞とみなす
_STAGNATION_TOLERANCE = 1e-14


@dataclass
class OptimizeResult:
    x: np.ndarray
    energy: float
    gradient_norm: float
    iterations: int
    converged: bool
    message: str
    energy_history: list[float] = field(default_factory=list)


def _two_loop_direction(gradient: np.ndarray, memory: deque) -> np.ndarray:
    q = gradient.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        alpha = rho * (s @ q)
        alphas.append(alpha)
        q -= alpha * y
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), alpha in zip(memory, reversed(alphas)):
        beta = rho * (y @ q)
        q += (alpha - beta) * s
    return -q


def lbfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    tolerance: float = LBFGS_TOLERANCE,
    max_iterations: int = LBFGS_MAX_ITERATIONS,
    history: int = LBFGS_HISTORY,
    accept: Callable[[np.ndarray, np.ndarray], bool] | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> OptimizeResult:
    """
    L-BFGS による最小化

    Args:
        fun: x -> (f(x), ∇f(x))。f は +∞ を返してよい
        x0: 初期点（f(x0) は有限であること）
        tolerance: |∇f| <= tolerance·max(1, |∇f(x0)|) で収束（エネルギーの停滞で止まった場合は converged=False）
        max_iterations: 最大反復回数
        history: 保持する曲率対の数
        accept: (試行点, 現在点) -> bool。False なら試行点を評価せずに棄却
        callback: 受理された各反復点で呼ばれる

    Returns:
        OptimizeResult: 受理された反復のエネルギーは単調非増加

    Raises:
        NonFiniteEnergy: f(x0) が有限でない場合
        LineSearchFailure: ステップ幅が MIN_STEP を下回った場合（例外の result 属性に最終反復を保持）
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    if not np.isfinite(f):
        raise NonFiniteEnergy(f"Initial energy is not finite: {f}")

    g_norm = float(np.linalg.norm(g))
    threshold = tolerance * max(1.0, g_norm)
    memory: deque = deque(maxlen=history)
    energy_history = [float(f)]

    def result(converged: bool, message: str, iterations: int) -> OptimizeResult:
        return OptimizeResult(
            x=x,
            energy=float(f),
            gradient_norm=float(np.linalg.norm(g)),
            iterations=iterations,
            converged=converged,
            message=message,
            energy_history=energy_history,
        )

    for iteration in range(max_iterations):
        if np.linalg.norm(g) <= threshold:
            return result(True, "gradient tolerance reached", iteration)

        direction = _two_loop_direction(g, memory)
        slope = float(g @ direction)
        if slope >= 0:
            # 曲率情報が壊れたら最急降下からやり直す
            memory.clear()
            direction = -g
            slope = float(g @ direction)

        step = 1.0 if memory else min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-300))
        while True:
            if step < MIN_STEP:
                if memory:
                    memory.clear()
                    direction = -g
                    slope = float(g @ direction)
                    step = min(1.0, 1.0 / float(np.linalg.norm(g)))
                    continue
                error = LineSearchFailure(f"Step size underflow at iteration {iteration} (energy {f:.17g})")
                error.result = result(False, "line search failed", iteration)
                raise error

            trial = x + step * direction
            if accept is not None and not accept(trial, x):
                step *= BACKTRACK_FACTOR
                continue
            f_trial, g_trial = fun(trial)
            if np.isfinite(f_trial) and f_trial <= f + ARMIJO_C1 * step * slope:
                break
            step *= BACKTRACK_FACTOR

        s = trial - x
        y = g_trial - g
        curvature = float(s @ y)
        if curvature > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            memory.append((s, y, 1.0 / curvature))

        decrease = f - f_trial
        x, f, g = trial, f_trial, g_trial
        energy_history.append(float(f))
        if callback is not None:
            callback(x)
        logger.debug(f"L-BFGS iteration {iteration + 1}: energy={f:.12g}, |g|={np.linalg.norm(g):.3e}, step={step:.3e}")

        if np.linalg.norm(g) <= threshold:
            return result(True, "gradient tolerance reached", iteration + 1)
        # エネルギーが丸め誤差の範囲でしか減らない場合は打ち切る（勾配は未収束）
        if decrease <= _STAGNATION_TOLERANCE * max(1.0, abs(f)):
            return result(False, "energy stagnated", iteration + 1)

    return result(bool(np.linalg.norm(g) <= threshold), "maximum iterations reached", max_iterations)
