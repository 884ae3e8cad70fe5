from .deepfilter import apply_deep_filter, pad_history
from .discriminator import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig
from .params import ParamReport, count_params
from .ssm import SelectiveSSM, SsmParams, SsmState, ssm_step
from .stage1 import Stage1, Stage1Config

__all__ = [
    "apply_deep_filter", "pad_history",
    "Discriminator", "DiscriminatorConfig",
    "Generator", "GeneratorConfig",
    "ParamReport", "count_params",
    "SelectiveSSM", "SsmParams", "SsmState", "ssm_step",
    "Stage1", "Stage1Config",
]
