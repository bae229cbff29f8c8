"""noisetrain: training small networks that stay accurate under weight noise."""

from .network import Batch, FilterSlice, ModelSpec, ParamSet
from .perturb import DeviceErrorModel, NoiseSpec, Schedule
from .optim import TrainConfig, train
from .tensorcore import RngStream

__all__ = [
    "Batch", "FilterSlice", "ModelSpec", "ParamSet",
    "DeviceErrorModel", "NoiseSpec", "Schedule",
    "TrainConfig", "train", "RngStream",
]
