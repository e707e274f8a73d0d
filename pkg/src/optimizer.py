"""
Adam gradient descent over pulse parameters, with epoch logging and
best-so-far tracking.

Parameters are optimized in normalized units theta / scale (the problem's
parameter scales, 2 pi GHz for amplitudes and detunings), so the learning
rate has the same meaning for every drive.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol

import numpy as np

from src import config
from src.errors import NumericalError, OptimizationError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Adam moments, step count and hyperparameters."""
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = config.ADAM_LR
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS

    def __post_init__(self):
        self.first_moment = np.asarray(self.first_moment, dtype=float)
        self.second_moment = np.asarray(self.second_moment, dtype=float)
        if self.first_moment.shape != self.second_moment.shape:
            raise ValueError("Adam moment vectors must have the same length.")
        if self.step < 0:
            raise ValueError("Step count must be non-negative.")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("Invalid Adam hyperparameters.")

    @classmethod
    def initial(cls, n_params: int, **hyperparameters) -> 'OptimizerState':
        return cls(first_moment=np.zeros(n_params), second_moment=np.zeros(n_params), **hyperparameters)

    @property
    def n_params(self) -> int:
        return self.first_moment.size


def adam_step(theta: np.ndarray, grad: np.ndarray, state: OptimizerState):
    """One bias-corrected Adam update. Returns (theta', state'); the inputs are not modified."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape or theta.shape != (state.n_params,):
        raise ValueError(f"Shape mismatch: theta {theta.shape}, grad {grad.shape}, state ({state.n_params},).")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise OptimizationError(f"non-finite gradient at parameter indices {bad[:10].tolist()}",
                                epoch=state.step)

    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, replace(state, first_moment=m, second_moment=v, step=step)


class OptimizationTarget(Protocol):
    """What run_optimization needs from a control problem."""

    def evaluate(self, theta: np.ndarray, with_gradient: bool = True): ...

    def parameter_scales(self) -> np.ndarray: ...


@dataclass
class EpochLog:
    epoch: int
    total: float
    terms: Dict[str, float]
    gradient_norm: float
    elapsed: float
    peak_live_matrices: int = 0

    def to_row(self, term_names: List[str]) -> list:
        return [self.epoch, self.total] + [self.terms.get(name, 0.0) for name in term_names]


@dataclass
class OptimizationResult:
    best_theta: np.ndarray
    best_cost: float
    best_epoch: int
    theta: np.ndarray
    log: List[EpochLog] = field(default_factory=list)
    state: Optional[OptimizerState] = None


def run_optimization(problem: OptimizationTarget, epochs: int, theta0: np.ndarray,
                     lr: float = config.ADAM_LR, beta1: float = config.ADAM_BETA1,
                     beta2: float = config.ADAM_BETA2, eps: float = config.ADAM_EPS,
                     on_epoch: Optional[Callable[[EpochLog], None]] = None,
                     checkpoint_every: int = 0,
                     checkpoint_callback: Optional[Callable[[int, np.ndarray], None]] = None) -> OptimizationResult:
    """
    Runs `epochs` Adam updates from theta0. The seed is evaluated too, so the
    log holds epochs + 1 entries; the best parameters seen are returned.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative.")
    theta0 = np.asarray(theta0, dtype=float)
    scales = np.asarray(problem.parameter_scales(), dtype=float)
    if scales.shape != theta0.shape or np.any(scales <= 0):
        raise ValueError("Parameter scales must be positive and match the parameter vector.")

    normalized = theta0 / scales
    state = OptimizerState.initial(theta0.size, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    log = []
    best_theta, best_cost, best_epoch = theta0.copy(), math.inf, 0
    theta = theta0.copy()
    start = time.perf_counter()

    for epoch in range(epochs + 1):
        theta = theta0.copy() if epoch == 0 else normalized * scales
        last = epoch == epochs
        try:
            result = problem.evaluate(theta, with_gradient=not last)
        except OptimizationError:
            raise
        except NumericalError as e:
            raise OptimizationError(str(e), epoch=epoch) from e

        total = float(result.evaluation.total)
        grad = None if last else result.gradient.values * scales
        peak = 0 if last else int(result.gradient.diagnostics.get("peak_live_matrices", 0))
        entry = EpochLog(epoch=epoch, total=total, terms=dict(result.evaluation.terms),
                         gradient_norm=float("nan") if grad is None else float(np.linalg.norm(grad)),
                         elapsed=time.perf_counter() - start,
                         peak_live_matrices=peak)
        log.append(entry)
        logger.info("epoch %d: cost=%.6e %s", epoch, total,
                    " ".join(f"{k}={v:.4e}" for k, v in entry.terms.items()))
        if on_epoch:
            on_epoch(entry)
        if math.isfinite(total) and total < best_cost:
            best_theta, best_cost, best_epoch = theta.copy(), total, epoch
        if checkpoint_callback and checkpoint_every > 0 and epoch > 0 and epoch % checkpoint_every == 0:
            checkpoint_callback(epoch, theta.copy())
        if last:
            break
        try:
            normalized, state = adam_step(normalized, grad, state)
        except OptimizationError as e:
            raise OptimizationError(e.detail, epoch=epoch) from e

    logger.info("Optimization finished: best cost %.6e at epoch %d of %d", best_cost, best_epoch, epochs)
    return OptimizationResult(best_theta=best_theta, best_cost=best_cost, best_epoch=best_epoch,
                              theta=theta, log=log, state=state)
