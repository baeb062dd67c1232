from enum import Enum


class Variant(str, Enum):
    """
    Ablation ladder, each rung adds one component to the previous one.
    """
    BASIC = 'basic'
    C1 = 'C1'
    C2 = 'C2'
    FULL = 'full'

    @property
    def uses_diffusion(self) -> bool:
        return self != Variant.BASIC

    @property
    def uses_dcg(self) -> bool:
        return self in (Variant.C2, Variant.FULL)

    @property
    def uses_mmd(self) -> bool:
        return self == Variant.FULL


class PriorCombine(str, Enum):
    MEAN = 'mean'
    SUM = 'sum'


class ChannelCollapse(str, Enum):
    MAX = 'max'
    SUM = 'sum'


class EncoderPreset(str, Enum):
    DESK = 'desk'
    RESNET18 = 'resnet18'


class MMDEstimator(str, Enum):
    BIASED = 'biased'
    UNBIASED = 'unbiased'


class F1Average(str, Enum):
    MACRO = 'macro'
    WEIGHTED = 'weighted'


class DatasetSource(str, Enum):
    IMAGE_FOLDER = 'image_folder'
    CSV_INDEX = 'csv_index'
    SYNTHETIC = 'synthetic'
