"""Self-regulating intensity threshold driven by the training-loss signal.

The controller keeps a running minimum of the per-batch loss.  Every
``update_frequency`` batches it compares the current batch loss against
that minimum: a loss above the best seen so far pushes the threshold down
by ``delta`` (clamped at ``lower_bound``), anything else pushes it up by
``delta`` (clamped at ``upper_bound``).  The running minimum is updated
before the comparison and is never reset, so under a flat loss the
increase branch is the default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, SignalError

ACTION_NONE = "none"
ACTION_INCREASE = "increase"
ACTION_DECREASE = "decrease"
ACTION_DECREASE_CLAMPED = "decrease_clamped"

DEFAULT_THRESHOLD = 60.0
DEFAULT_DELTA = 2.0
DEFAULT_LOWER_BOUND = 45.0
DEFAULT_UPPER_BOUND = 255.0
DEFAULT_UPDATE_FREQUENCY = 150


@dataclass(frozen=True)
class ControllerConfig:
    threshold: float = DEFAULT_THRESHOLD
    delta: float = DEFAULT_DELTA
    lower_bound: float = DEFAULT_LOWER_BOUND
    upper_bound: float = DEFAULT_UPPER_BOUND
    update_frequency: int = DEFAULT_UPDATE_FREQUENCY


@dataclass(frozen=True)
class ThresholdEvent:
    """Audit record emitted by one observe() call, post-update state."""

    step_index: int
    action: str
    threshold_after: float
    loss: float
    best_loss_after: float


class ThresholdController:
    """Trainable pixel-intensity threshold plus its update-rule state.

    Single-owner mutable state: exactly one logical thread may call
    observe(), once per mini-batch, in batch order.
    """

    def __init__(self, config: ControllerConfig | None = None) -> None:
        cfg = config or ControllerConfig()
        if not (cfg.delta > 0 and math.isfinite(cfg.delta)):
            raise ConfigError(f"delta must be positive, got {cfg.delta!r}")
        if cfg.update_frequency < 1:
            raise ConfigError(f"update_frequency must be >= 1, got {cfg.update_frequency}")
        if not (cfg.lower_bound <= cfg.threshold <= cfg.upper_bound):
            raise ConfigError(
                f"initial threshold {cfg.threshold} outside "
                f"[{cfg.lower_bound}, {cfg.upper_bound}]"
            )
        self.threshold = float(cfg.threshold)
        self.delta = float(cfg.delta)
        self.lower_bound = float(cfg.lower_bound)
        self.upper_bound = float(cfg.upper_bound)
        self.update_frequency = int(cfg.update_frequency)
        self.best_loss = math.inf
        self.batch_counter = 0

    def current_threshold(self) -> float:
        return self.threshold

    def observe(self, loss: float) -> ThresholdEvent:
        """Feed one mini-batch loss; maybe adjust the threshold.

        The running minimum absorbs the new loss first, then every
        update_frequency-th call picks the adjustment branch.  Raises
        SignalError on a non-finite or negative loss without touching
        any state.
        """
        loss = float(loss)
        if not math.isfinite(loss) or loss < 0.0:
            raise SignalError(f"loss must be finite and >= 0, got {loss!r}")

        self.best_loss = min(self.best_loss, loss)
        self.batch_counter += 1
        action = ACTION_NONE
        if self.batch_counter % self.update_frequency == 0:
            if loss > self.best_loss:
                lowered = self.threshold - self.delta
                if lowered < self.lower_bound:
                    self.threshold = self.lower_bound
                    action = ACTION_DECREASE_CLAMPED
                else:
                    self.threshold = lowered
                    action = ACTION_DECREASE
            else:
                self.threshold = min(self.upper_bound, self.threshold + self.delta)
                action = ACTION_INCREASE
        return ThresholdEvent(
            step_index=self.batch_counter,
            action=action,
            threshold_after=self.threshold,
            loss=loss,
            best_loss_after=self.best_loss,
        )


def new_controller(
    threshold: float = DEFAULT_THRESHOLD,
    delta: float = DEFAULT_DELTA,
    lower_bound: float = DEFAULT_LOWER_BOUND,
    upper_bound: float = DEFAULT_UPPER_BOUND,
    update_frequency: int = DEFAULT_UPDATE_FREQUENCY,
) -> ThresholdController:
    """Build a controller from keyword parameters (defaults shown above)."""
    return ThresholdController(ControllerConfig(
        threshold=threshold,
        delta=delta,
        lower_bound=lower_bound,
        upper_bound=upper_bound,
        update_frequency=update_frequency,
    ))
