"""Type definitions shared across chernsim."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from chernsim.core import TrialHistory

FloatArray = npt.NDArray[np.float64]
"""Dense float64 array (vectors of means, designs, gradients)."""


@runtime_checkable
class ArmSampler(Protocol):
    """Protocol every finite-testing sampling policy satisfies.

    A sampler owns whatever per-trial state it needs (cached designs,
    counters) and picks the arm for the next round.
    """

    name: str

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        """Arm to pull in round ``hist.t + 1``."""
        ...

    def stats(self) -> dict[str, Any]:
        """Per-trial counters copied into the TrialReport."""
        ...
