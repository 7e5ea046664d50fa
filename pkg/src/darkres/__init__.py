"""Darknet flow classification with stacked random reservoirs."""

from .dataset import (FeatureSchema, FlowDataset, NormStats, SynthSpec, apply_normalize, fit_normalize,
                      load_csv, stratified_split, synth_generate)
from .metrics import EvalReport, confusion_matrix, evaluate_predictions, summary
from .pps import PpsConfig, pps_matrix, pps_score, select_features
from .reservoir import ReservoirGenome, ReservoirModel, fit_readout, instantiate, parse_genome, train_model
from .search import SearchConfig, evaluate, mutate, rank, run_search
from .shapley import BackgroundSet, exact_shapley, global_importance, sampled_shapley

__version__ = "0.1.0"
