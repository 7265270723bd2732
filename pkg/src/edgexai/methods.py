"""Attribution method selection.

The three methods differ only in how gradients pass backward through a
rectifier: masked by the forward decision, rectified themselves, or both.
The choice therefore decides which masks the forward pass must record.
"""

from __future__ import annotations

from enum import Enum


class AttributionMethod(Enum):
    SALIENCY = "saliency"
    DECONVNET = "deconvnet"
    GUIDED = "guided"


def needs_relu_mask(method: AttributionMethod) -> bool:
    """Deconvnet ignores the forward rectifier decision, so no mask is kept."""
    return method is not AttributionMethod.DECONVNET
