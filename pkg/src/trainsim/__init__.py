"""Software twin of a tiled, channel-parallel CNN-training accelerator.

Pieces: a full-precision reference training engine, word-level DRAM layout
maps with DMA address traces, a burst-level transfer-cost simulator, the
closed-form latency/resource model, and a tile scheduler that picks design
parameters for a device budget.
"""

from .model import DeviceSpec, Kind, LayerSpec, NetworkSpec  # noqa: F401
from .model import count_train_ops, validate_and_infer  # noqa: F401
from .plan import Channel, LayerTile, PlanEntry, Process, TilePlan  # noqa: F401

__version__ = "0.1.0"
