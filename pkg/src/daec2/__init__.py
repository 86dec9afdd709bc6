"""Domain adaptation from labeled frame images to unlabeled event-camera data."""

from .augment import AugmentationPolicy, ViewPair
from .event_io import DatasetManifest, Event, EventStream
from .losses import LossReport, LossWeights
from .nets import ModelBundle, NetworkConfig
from .representation import EventFrame, FrameImage
from .trainer import Checkpoint, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy", "Checkpoint", "DatasetManifest", "Event",
    "EventFrame", "EventStream", "FrameImage", "LossReport", "LossWeights",
    "ModelBundle", "NetworkConfig", "TrainConfig", "ViewPair", "__version__",
]
