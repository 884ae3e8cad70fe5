"""Full-band streaming speech enhancement with a predictive stage and a generative regeneration stage."""
from .dsp import StftConfig, algorithmic_latency_ms
from .pipeline import Enhancer, ModelBundle, enhance_offline, enhance_streaming

__all__ = ["StftConfig", "algorithmic_latency_ms", "Enhancer", "ModelBundle", "enhance_offline",
           "enhance_streaming"]
__version__ = "0.1.0"
