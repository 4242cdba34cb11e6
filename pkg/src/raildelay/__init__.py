"""Station-level railway delay forecasting toolkit.

Builds a station graph from train running records, extracts hourly delay
features, and trains a spatio-temporal graph network with
frequency-aware spatial attention to predict per-station average arrival
delay over the next few hours.
"""

from .railnet import (RailGraph, SpatialWeights, Station, build_graph,
                      scaled_laplacian, spatial_weight_matrix, zone_subgraph)
from .ingest import (FeatureCube, RunRecord, cube_stats, hourly_features,
                     hourly_headway, parse_records)
from .windows import (Sample, Splits, WindowConfig, daily_window,
                      enumerate_samples, make_sample, recent_window,
                      split_dataset, weekly_window)
from .model import (ModelConfig, ModelParams, forward, graph_artifacts,
                    init_params, load_checkpoint, predict, save_checkpoint)
from .train import TrainConfig, TrainReport, fit, masked_mse
from .evaluation import MetricReport, horizon_report, mae, mape, rmse
from .baselines import ha_predict, persistence_predict
from .synth import SynthConfig, generate_cube, generate_records

__version__ = "0.1.0"
