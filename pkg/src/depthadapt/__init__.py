"""Energy-guided test-time adaptation lab for sparse-to-dense depth completion."""

from .adapt import AdaptConfig, AdaptReport, StreamResult, adapt_step, baseline_step, run_stream
from .dataset import DatasetManifest, Sample, load_all, load_dataset, save_dataset
from .depth_net import DepthArch, DepthNet, build_model, insert_adaptation, partition_parameters, predict
from .energy import EnergyArch, EnergyGrid, EnergyNet, build_energy_model, calibrate_tau, energy_forward, map_to_energy, patch_mse, tau_from_deltas
from .estimators import CovariateShifter, DepthCompleter, EnergyScorer, StreamAdapter
from .metrics import EvalConfig, MetricRecord, evaluate_frame, mae, rmse, summarize
from .perturb import PerturbConfig, fgsm_perturb
from .synth import ShiftSpec, apply_shift, generate_scene, make_samples, sample_sparse, simulate_sensor_points
from .train_depth import TrainConfig, train_supervised
from .train_energy import EnergyTrainConfig, train_energy

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptReport", "StreamResult", "adapt_step", "baseline_step", "run_stream",
    "DatasetManifest", "Sample", "load_all", "load_dataset", "save_dataset",
    "DepthArch", "DepthNet", "build_model", "insert_adaptation", "partition_parameters", "predict",
    "EnergyArch", "EnergyGrid", "EnergyNet", "build_energy_model", "calibrate_tau",
    "energy_forward", "map_to_energy", "patch_mse", "tau_from_deltas",
    "CovariateShifter", "DepthCompleter", "EnergyScorer", "StreamAdapter",
    "EvalConfig", "MetricRecord", "evaluate_frame", "mae", "rmse", "summarize",
    "PerturbConfig", "fgsm_perturb",
    "ShiftSpec", "apply_shift", "generate_scene", "make_samples", "sample_sparse", "simulate_sensor_points",
    "TrainConfig", "train_supervised",
    "EnergyTrainConfig", "train_energy",
]
