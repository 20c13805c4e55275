"""Exception hierarchy for tabopen.

Everything derives from ValueError so callers that only catch ValueError
keep working. The CLI maps ConfigError to exit code 2 and DataError to 3.
"""

from __future__ import annotations

from typing import Any


class TabopenError(ValueError):
    """Base class for all tabopen errors."""


class ConfigError(TabopenError):
    """Invalid run configuration, unknown model/task, missing external files."""


class DataError(TabopenError):
    """Schema problems, insufficient data, failed metric preconditions."""


class ConvergenceError(DataError):
    """Sinkhorn scaling did not reach the marginal tolerance."""

    def __init__(self, message: str, residual: float, iterations: int) -> None:
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class TrainingError(DataError):
    """Non-finite loss while training a built-in model."""

    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class OverlapError(DataError):
    """The propensity-trimmed overlap region is empty."""

    def __init__(self, eta: float, histogram: list[int], edges: list[float]) -> None:
        bins = ", ".join(
            f"[{lo:.1f},{hi:.1f}): {count}" for lo, hi, count in zip(edges[:-1], edges[1:], histogram)
        )
        super().__init__(f"empty overlap region for eta={eta}; propensity histogram: {bins}")
        self.eta = eta
        self.histogram = histogram
        self.edges = edges

    def to_dict(self) -> dict[str, Any]:
        return {"eta": self.eta, "histogram": self.histogram, "edges": self.edges}
