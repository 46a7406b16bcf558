"""Low-rank matrix completion by thresholded alternating minimization
over unions of random regular bipartite sampling graphs."""

from .core import TamConfig, TamResult, run_tam, run_vanilla_am
from .graph_sampler import (
    BipartiteRegularGraph,
    SampleSchedule,
    sample_bipartite_regular,
    sample_rrg_schedule,
)
from .synthgen import GroundTruth, gen_adversarial_gramian, gen_flat

__all__ = [
    "BipartiteRegularGraph",
    "GroundTruth",
    "SampleSchedule",
    "TamConfig",
    "TamResult",
    "gen_adversarial_gramian",
    "gen_flat",
    "run_tam",
    "run_vanilla_am",
    "sample_bipartite_regular",
    "sample_rrg_schedule",
]
__version__ = "0.1.0"
