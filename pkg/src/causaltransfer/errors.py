"""Exception hierarchy for causaltransfer.

Every error raised on purpose by the package derives from
``CausalTransferError``. Several also subclass the matching builtin so callers
that only know ``ValueError`` keep working.
"""

from __future__ import annotations

from typing import Optional


class CausalTransferError(Exception):
    """Root of all package errors."""


class ConfigError(CausalTransferError, ValueError):
    """Invalid configuration document or parameter combination."""


class DimensionError(CausalTransferError, ValueError):
    """Shape or width mismatch between inputs."""


class NonFiniteError(CausalTransferError, FloatingPointError):
    """A NaN or infinity showed up in a gradient, parameter or intermediate."""


class DatasetError(CausalTransferError, ValueError):
    """Malformed dataset contents or file."""


class DegenerateGroupError(DatasetError):
    """A treatment group is empty where the computation needs it."""


class PotentialsUnavailableError(DatasetError):
    """Counterfactual quantity requested on factual-only data."""


class TransportError(CausalTransferError, ValueError):
    """Invalid optimal transport request."""


class AffinityError(CausalTransferError, ValueError):
    """Misuse of Fisher signatures or task distances."""


class ApproximationError(AffinityError):
    """Source model does not meet the configured approximation threshold."""

    def __init__(self, message: str, loss: float, threshold: float):
        super().__init__(message)
        self.loss = loss
        self.threshold = threshold


class StageError(CausalTransferError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str, *, task: Optional[str] = None):
        self.stage = stage
        self.task = task
        where = f"{stage}:{task}" if task else stage
        super().__init__(f"[{where}] {message}")


class AcceptanceError(CausalTransferError):
    """One or more experiment acceptance checks failed."""

    def __init__(self, failed: list):
        self.failed = list(failed)
        names = ", ".join(str(getattr(c, "name", c)) for c in self.failed)
        super().__init__(f"acceptance checks failed: {names}")
