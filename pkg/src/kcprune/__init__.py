"""Structured channel pruning by per-channel kernel clustering and greedy
maximum cluster coverage."""

from .clusters import LayerClusterUniverse, build_universe, keep_count, layer_cutoff, merge_budget
from .coverage import (CoverageInstance, SelectionResult, brute_force_optimum, coverage_rate,
                       filter_gain, select_greedy)
from .linkage import (MergeSequence, agglomerate, agglomerate_naive, check_monotone, control_cut,
                      linkage_objective, ward_distance)
from .model import (ConvLayer, ModelSnapshot, PruneMask, apply_masks, conv_flops, load_snapshot,
                    model_flops, save_snapshot)
from .pipeline import (MockTrainer, PipelineConfig, RunReport, channel_selection, emit_report,
                       run_pipeline)
from .schedule import PruneState, Schedule, layer_sparsity, quantile_threshold, regrow, should_prune

__version__ = "0.1.0"
