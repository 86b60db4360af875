"""Channel gain maps from sparse measurements.

The package builds a dense radio gain map for an area from a limited
measurement campaign: it clusters the measurements into propagation
subregions, fits one small convolutional regressor per subregion, decides
where further measurements pay off most, and compares against classical
spatial interpolation.

High-level entry points:

- :class:`SubregionalGainMapper` — scikit-learn style fit/predict.
- :func:`run_pipeline` / the ``gainmap`` CLI — staged artifact pipeline.
- :mod:`gainmap.scenario` — synthetic scenes with known ground truth.
"""

from .baselines import (
    IdwInterpolator,
    KrigingInterpolator,
    VariogramModel,
    fit_variogram,
    idw_predict,
    kriging_predict,
    nrmse,
)
from .clustering import (
    FeatureScaler,
    Partition,
    SubregionClusterer,
    assign_geographic,
    kmeans_partition,
)
from .mapper import (
    McnnModel,
    SubregionalGainMapper,
    draw_test_set,
    evaluate_rmse,
    predict_grid,
    predict_point,
    predict_points,
    select_k,
    train_subnetworks,
)
from .network import (
    Architecture,
    Hyperparameters,
    NetworkParams,
    forward,
    grad_check,
    init_network,
    train,
)
from .persist import (
    load_model,
    load_partition,
    read_grid_csv,
    save_model,
    save_partition,
)
from .pipeline import PipelineConfig, load_config, run_pipeline, run_stage
from .reuse import reuse_boundary_points
from .sampling import (
    allocate_counts,
    compute_sampling_rates,
    random_sample,
    resample_subregions,
)
from .scenario import (
    Building,
    EnvironmentSpec,
    GroundTruthMap,
    PropagationParams,
    build_environment,
    compute_ground_truth,
    ingest_dataset,
    random_buildings,
    scene_with_buildings,
    write_dataset,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "Building",
    "EnvironmentSpec",
    "FeatureScaler",
    "GroundTruthMap",
    "Hyperparameters",
    "IdwInterpolator",
    "KrigingInterpolator",
    "McnnModel",
    "NetworkParams",
    "Partition",
    "PipelineConfig",
    "PropagationParams",
    "SubregionClusterer",
    "SubregionalGainMapper",
    "VariogramModel",
    "allocate_counts",
    "assign_geographic",
    "build_environment",
    "compute_ground_truth",
    "compute_sampling_rates",
    "derive_seed",
    "draw_test_set",
    "evaluate_rmse",
    "fit_variogram",
    "forward",
    "grad_check",
    "idw_predict",
    "ingest_dataset",
    "init_network",
    "kmeans_partition",
    "kriging_predict",
    "load_config",
    "load_model",
    "load_partition",
    "nrmse",
    "predict_grid",
    "predict_point",
    "predict_points",
    "random_buildings",
    "random_sample",
    "read_grid_csv",
    "resample_subregions",
    "reuse_boundary_points",
    "run_pipeline",
    "run_stage",
    "save_model",
    "save_partition",
    "scene_with_buildings",
    "select_k",
    "train",
    "train_subnetworks",
    "write_dataset",
]
