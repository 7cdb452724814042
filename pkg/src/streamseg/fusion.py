"""Scalar logit fusion, per-sample optimal-weight grid search, and the
running-mean tracker that turns recent optima into the live weight."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import AlphaOutOfRangeError, DimensionMismatchError
from .metrics import sigmoid

DEFAULT_ALPHA = 0.5
DEFAULT_WINDOW = 5
DEFAULT_GRID_POINTS = 101


def fuse(
    s: np.ndarray, u: np.ndarray, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Blend two logit maps: prob = sigmoid(alpha*s + (1-alpha)*u).

    Returns the probability map and its binarization at 0.5 (ties to
    background).
    """
    s = np.asarray(s, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if s.shape != u.shape:
        raise DimensionMismatchError(f"shape {s.shape} vs {u.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRangeError(f"alpha {alpha} outside [0, 1]")
    z = alpha * s + (1.0 - alpha) * u
    prob = sigmoid(z)
    return prob, prob > 0.5


def optimal_alpha(
    s: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> tuple[float, float]:
    """DSC-maximizing fusion weight over an even grid on [0, 1].

    Evaluates the Dice score of the binarized fusion against y at
    grid_points evenly spaced weights and returns (alpha_star,
    best_dsc). Ties break toward the smallest alpha.
    """
    s = np.asarray(s, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if not (s.shape == u.shape == y.shape):
        raise DimensionMismatchError(f"shapes {s.shape}, {u.shape}, {y.shape}")
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    # i/(n-1) exactly, so independent evaluators land on identical floats
    alphas = np.arange(grid_points, dtype=np.float64) / (grid_points - 1)
    sf = s.ravel()
    uf = u.ravel()
    yf = y.ravel().astype(np.float64)
    # prob > 0.5 is exactly logit > 0, so the sigmoid never needs evaluating
    z = alphas[:, None] * sf[None, :] + (1.0 - alphas)[:, None] * uf[None, :]
    masks = z > 0.0
    inter = masks @ yf
    sizes = masks.sum(axis=1)
    y_sum = yf.sum()
    denom = sizes + y_sum
    dsc = np.where(denom > 0, 2.0 * inter / np.maximum(denom, 1.0), 1.0)
    best = int(np.argmax(dsc))  # argmax takes the first, i.e. smallest alpha
    return float(alphas[best]), float(dsc[best])


class AlphaTracker:
    """Ring of recent optimal weights; its mean is the live fusion weight."""

    def __init__(
        self, window: int = DEFAULT_WINDOW, default_alpha: float = DEFAULT_ALPHA
    ):
        if window < 1:
            raise ValueError("window must be >= 1")
        self._values: deque[float] = deque(maxlen=window)
        self.default_alpha = default_alpha

    def push(self, alpha_star: float) -> None:
        if not 0.0 <= alpha_star <= 1.0:
            raise AlphaOutOfRangeError(f"alpha_star {alpha_star} outside [0, 1]")
        self._values.append(float(alpha_star))

    def value(self) -> float:
        """Mean of stored optima, or the default when none are stored."""
        if not self._values:
            return self.default_alpha
        return sum(self._values) / len(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def snapshot(self) -> list[float]:
        return list(self._values)
