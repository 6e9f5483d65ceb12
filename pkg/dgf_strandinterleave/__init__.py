from .CommVolume import comm_volume_estimate, cross_time_ratio
from .CompareReport import compare_report, interference_breakdown, sweep_report
from .errors import ConfigError, CycleError, InfeasibleError, MissingProfileEntryError, StrandInterleaveError
from .FoldedLayout import FoldedLayout, LinearLayout, fold_layers, linear_layers
from .IterationEstimator import IterationEstimate, estimate_iteration_time
from .LayerDag import LayerDag, OpNode, count_topological_orders, enumerate_topological_orders, validate_sequence
from .LayerDagBuilder import build_layer_dag, load_template
from .MemorySimulator import MemoryConfig, MemoryTimeline, max_model_size, simulate_memory
from .OperatorClass import Lane, OperatorClass
from .OverlapTable import OverlapTable, SoloTimeTable, oef, overlapped_time
from .PairingPlan import PairingPlan, brute_force_align, dp_align
from .PipelineSchedule import Block, PipelineSchedule, bubble_ratio, pp_comm_volume, validate_schedule
from .PipelineSchedulers import schedule_1f1b, schedule_bidirectional, schedule_w_pipeline
from .Presets import cluster_preset, list_presets, model_preset
from .Profile import load_profile, save_profile, synth_profile, validate_profile
from .Scenario import Scenario, load_scenario
from .SegmentCost import LaneCostModel, SegmentCost, segment_pair_cost
from .Segmentation import Segmentation, enumerate_segmentations
from .SIPlanSearch import BestPlan, SearchCaps, round_robin_plan, search_si_plan
from .Specs import ClusterSpec, ModelSpec, ParallelismSpec
