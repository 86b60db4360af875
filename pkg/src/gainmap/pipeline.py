"""Staged construction pipeline over persisted artifacts.

Each stage reads its inputs from the run directory and writes new files;
no stage rewrites a predecessor's output. Re-running with the same config
and seed reproduces every artifact byte for byte (wall-clock timings live
in their own file for exactly that reason).

Stage order in a full run::

    generate -> sample -> sweep-k -> cluster -> train (initial)
      -> resample -> reuse -> train-final -> predict -> evaluate -> report

The standalone ``train`` stage infers which model it is building: with
assembled training sets on disk it produces ``model_final``, otherwise
``model_initial``.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import baselines as bl
from .clustering import assign_geographic, kmeans_partition
from .mapper import (
    MIN_TRAINABLE_CLUSTER,
    draw_test_set,
    evaluate_rmse,
    predict_grid,
    predict_points,
    select_k,
    train_subnetworks,
)
from .network import Architecture, Hyperparameters
from .persist import (
    FORMAT_VERSION,
    export_heatmap,
    load_model,
    load_partition,
    save_model,
    save_partition,
    write_grid_csv,
)
from .reuse import reuse_boundary_points
from .sampling import (
    DegenerateRatesError,
    allocate_counts,
    compute_sampling_rates,
    even_rates,
    population_variance,
    random_sample,
    resample_subregions,
)
from .scenario import (
    Building,
    EnvironmentSpec,
    PropagationParams,
    build_environment,
    compute_ground_truth,
    ingest_dataset,
    random_buildings,
    write_dataset,
)
from .seeding import derive_seed

SCHEMA_VERSION = 1

# artifact file names inside a run directory
ENVIRONMENT_JSON = "environment.json"
GROUND_TRUTH_CSV = "ground_truth.csv"
GROUND_TRUTH_PGM = "ground_truth.pgm"
DATASET_CSV = "dataset.csv"
TEST_SET_CSV = "test_set.csv"
K_SELECTION_JSON = "k_selection.json"
PARTITION_JSON = "partition.json"
MODEL_INITIAL_DIR = "model_initial"
MODEL_FINAL_DIR = "model_final"
SAMPLING_PLAN_JSON = "sampling_plan.json"
DATASET_NEW_CSV = "dataset_new.csv"
DATASET_AUGMENTED_CSV = "dataset_augmented.csv"
TRAINING_SETS_JSON = "training_sets.json"
GRID_CSV = "grid.csv"
HEATMAP_PGM = "heatmap.pgm"
EVALUATION_JSON = "evaluation.json"
REPORT_JSON = "report.json"
TIMINGS_JSON = "timings.json"

STAGES = (
    "generate", "sample", "sweep-k", "cluster", "train", "resample",
    "reuse", "train-final", "predict", "evaluate", "report",
)


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass
class SamplingConfig:
    m_scgm: int = 1600
    further_fraction: float = 0.25
    further_n: int | None = None


@dataclass
class ClusteringConfig:
    k_range: tuple[int, int] = (1, 9)
    k: int | None = None          # fixed count: the sweep is skipped
    n_restarts: int = 10
    tol: float = 1e-6
    max_iter: int = 300
    test_fraction: float = 0.2
    min_cluster: int = MIN_TRAINABLE_CLUSTER


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int | None = None

    def hyper(self) -> Hyperparameters:
        return Hyperparameters(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
        )


@dataclass
class ReuseStageConfig:
    enabled: bool = True
    sigma_factor: float = 0.5


@dataclass
class BaselinesConfig:
    enabled: bool = True
    idw_power: float = 2.0
    variogram_bins: int = 15
    kriging_neighborhood: int = 32


@dataclass
class PipelineConfig:
    seed: int = 0
    environment: dict | None = None     # raw doc; resolved per run
    dataset: str | None = None          # pre-existing measurement CSV
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    reuse: ReuseStageConfig = field(default_factory=ReuseStageConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    output_dir: str | None = None
    threads: int = 1


def _take(doc: dict, allowed, where: str) -> dict:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(
            f"{where}: unknown key(s) {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}"
        )
    return dict(doc)


def _section(cls, doc, where):
    kwargs = _take(doc or {}, cls.__dataclass_fields__, where)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> PipelineConfig:
    """Parse and validate a YAML pipeline config."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    top = ("seed", "environment", "dataset", "sampling", "clustering",
           "training", "reuse", "baselines", "output_dir", "threads")
    doc = _take(doc, top, str(path))
    cfg = PipelineConfig(
        seed=int(doc.get("seed", 0)),
        environment=doc.get("environment"),
        dataset=doc.get("dataset"),
        sampling=_section(SamplingConfig, doc.get("sampling"), "sampling"),
        clustering=_section(ClusteringConfig, doc.get("clustering"),
                            "clustering"),
        training=_section(TrainingConfig, doc.get("training"), "training"),
        reuse=_section(ReuseStageConfig, doc.get("reuse"), "reuse"),
        baselines=_section(BaselinesConfig, doc.get("baselines"), "baselines"),
        output_dir=doc.get("output_dir"),
        threads=int(doc.get("threads", 1)),
    )
    if isinstance(cfg.clustering.k_range, list):
        cfg.clustering.k_range = tuple(cfg.clustering.k_range)
    if len(cfg.clustering.k_range) != 2:
        raise ConfigError("clustering.k_range must be [low, high]")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.environment is None and cfg.dataset is None:
        raise ConfigError("config needs an environment block or a dataset path")
    if cfg.environment is None and cfg.clustering.k is None:
        raise ConfigError(
            "measurement-only runs need a fixed clustering.k: without a "
            "scene there is no held-out truth to score a sweep against"
        )
    if cfg.dataset is not None and not os.path.exists(cfg.dataset):
        raise ConfigError(f"dataset path does not exist: {cfg.dataset}")
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """Serialize a config back to YAML (values survive a round trip)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "environment": cfg.environment,
        "dataset": cfg.dataset,
        "sampling": asdict(cfg.sampling),
        "clustering": {**asdict(cfg.clustering),
                       "k_range": list(cfg.clustering.k_range)},
        "training": asdict(cfg.training),
        "reuse": asdict(cfg.reuse),
        "baselines": asdict(cfg.baselines),
        "output_dir": cfg.output_dir,
        "threads": cfg.threads,
    }
    return yaml.safe_dump(doc, sort_keys=True)


def environment_from_config(cfg: PipelineConfig) -> EnvironmentSpec:
    """Resolve the environment block into a concrete spec.

    ``random_buildings: {count, seed}`` draws footprints that keep the BS
    outdoors; an explicit ``buildings`` list is taken as is. The shadowing
    seed defaults to a value derived from the master seed.
    """
    if cfg.environment is None:
        raise ConfigError("no environment block in config")
    defaults = {
        "width": 470.0, "height": 630.0, "grid_step": 1.0,
        "bs_position": (120.0, 540.0, 164.0), "bs_power": 1.0,
        "carrier_frequency": 4800.0, "sample_height": 1.5,
        "buildings": None, "random_buildings": None,
        "propagation": None, "seed": None,
    }
    doc = _take(dict(cfg.environment), defaults, "environment")
    prop = PropagationParams(**_take(
        dict(doc.get("propagation") or {}),
        PropagationParams.__dataclass_fields__,
        "environment.propagation",
    ))
    width = float(doc.get("width", defaults["width"]))
    height = float(doc.get("height", defaults["height"]))
    bs = tuple(float(v) for v in doc.get("bs_position", defaults["bs_position"]))
    if doc.get("buildings") is not None and doc.get("random_buildings") is not None:
        raise ConfigError(
            "environment: give either buildings or random_buildings, not both"
        )
    buildings: tuple[Building, ...] = ()
    if doc.get("buildings") is not None:
        buildings = tuple(
            Building(**_take(dict(b), Building.__dataclass_fields__,
                             "environment.buildings[]"))
            for b in doc["buildings"]
        )
    elif doc.get("random_buildings") is not None:
        rb = _take(dict(doc["random_buildings"]), ("count", "seed"),
                   "environment.random_buildings")
        if "count" not in rb:
            raise ConfigError("environment.random_buildings needs a count")
        rb_seed = rb.get("seed")
        if rb_seed is None:
            rb_seed = derive_seed(cfg.seed, "buildings")
        buildings = random_buildings(
            int(rb["count"]), width, height, int(rb_seed),
            keep_clear=(bs[0], bs[1]),
        )
    env_seed = doc.get("seed")
    if env_seed is None:
        env_seed = derive_seed(cfg.seed, "environment")
    return EnvironmentSpec(
        width=width,
        height=height,
        grid_step=float(doc.get("grid_step", 1.0)),
        bs_position=bs,
        bs_power=float(doc.get("bs_power", 1.0)),
        carrier_frequency=float(doc.get("carrier_frequency", 4800.0)),
        sample_height=float(doc.get("sample_height", 1.5)),
        buildings=buildings,
        propagation=prop,
        seed=int(env_seed),
    )


# ---------------------------------------------------------------------------
# artifact helpers

def _dump_json(obj, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_json(path):
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"missing artifact {os.path.basename(path)}; "
            f"run the earlier stages first"
        )
    with open(path) as fh:
        return json.load(fh)


def spec_to_doc(spec: EnvironmentSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "width": spec.width,
        "height": spec.height,
        "grid_step": spec.grid_step,
        "bs_position": list(spec.bs_position),
        "bs_power": spec.bs_power,
        "carrier_frequency": spec.carrier_frequency,
        "sample_height": spec.sample_height,
        "buildings": [asdict(b) for b in spec.buildings],
        "propagation": asdict(spec.propagation),
        "seed": spec.seed,
    }


def spec_from_doc(doc: dict) -> EnvironmentSpec:
    return EnvironmentSpec(
        width=doc["width"],
        height=doc["height"],
        grid_step=doc["grid_step"],
        bs_position=tuple(doc["bs_position"]),
        bs_power=doc["bs_power"],
        carrier_frequency=doc["carrier_frequency"],
        sample_height=doc["sample_height"],
        buildings=tuple(Building(**b) for b in doc["buildings"]),
        propagation=PropagationParams(**doc["propagation"]),
        seed=doc["seed"],
    )


def _load_environment(out: str):
    doc = _load_json(os.path.join(out, ENVIRONMENT_JSON))
    return build_environment(spec_from_doc(doc))


def _load_truth(out: str):
    # the ground truth is bit-reproducible from its spec, so stages
    # rebuild it instead of parsing the (larger) exported grid
    return compute_ground_truth(_load_environment(out))


def _load_dataset(out: str, name: str = DATASET_CSV, env=None) -> np.ndarray:
    path = os.path.join(out, name)
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"missing artifact {name}; run the earlier stages first"
        )
    return ingest_dataset(path, env)


def _ensure_test_set(cfg: PipelineConfig, out: str) -> np.ndarray:
    """Load the held-out evaluation cells, drawing them once if absent.

    The draw is keyed off the master seed alone, so a fixed-K run and a
    sweep run over the same scene hold out identical cells.
    """
    path = os.path.join(out, TEST_SET_CSV)
    if os.path.exists(path):
        return ingest_dataset(path)
    truth = _load_truth(out)
    samples = _load_dataset(out)
    test = draw_test_set(truth, samples, cfg.clustering.test_fraction,
                         cfg.seed)
    write_dataset(test, path)
    return test


def _partition_seed(cfg: PipelineConfig, k: int) -> int:
    # same derivation the sweep uses, so clustering at the selected count
    # reproduces exactly the partition the selection was scored on
    return derive_seed(cfg.seed, "kmeans", k)


# ---------------------------------------------------------------------------
# stages

def stage_generate(cfg: PipelineConfig, out: str) -> dict:
    """Build the synthetic scene and export its ground truth."""
    spec = environment_from_config(cfg)
    truth = compute_ground_truth(build_environment(spec))
    _dump_json(spec_to_doc(spec), os.path.join(out, ENVIRONMENT_JSON))
    write_grid_csv(truth.gains_db, truth.env,
                   os.path.join(out, GROUND_TRUTH_CSV))
    export_heatmap(truth.gains_db, truth.blocked,
                   os.path.join(out, GROUND_TRUTH_PGM))
    return {"buildings": len(spec.buildings),
            "cells": int((~truth.blocked).sum()),
            "blocked": int(truth.blocked.sum())}


def stage_sample(cfg: PipelineConfig, out: str) -> dict:
    """Draw the uniform measurement campaign, or ingest a provided one."""
    path = os.path.join(out, DATASET_CSV)
    if cfg.dataset is not None:
        env = None
        if os.path.exists(os.path.join(out, ENVIRONMENT_JSON)):
            env = _load_environment(out)
        samples = ingest_dataset(cfg.dataset, env)
        write_dataset(samples, path)
        return {"m": int(samples.shape[0]), "source": cfg.dataset}
    truth = _load_truth(out)
    samples = random_sample(truth, cfg.sampling.m_scgm,
                            derive_seed(cfg.seed, "scgm"))
    write_dataset(samples, path)
    return {"m": int(samples.shape[0]), "source": "uniform"}


def stage_sweep_k(cfg: PipelineConfig, out: str) -> dict:
    """Sweep candidate subregion counts and pick the best by test RMSE."""
    cc = cfg.clustering
    truth = _load_truth(out)
    samples = _load_dataset(out)
    lo, hi = cc.k_range
    sel = select_k(
        truth, samples, range(int(lo), int(hi) + 1),
        Architecture(), cfg.training.hyper(),
        seed=cfg.seed,
        test_fraction=cc.test_fraction,
        n_restarts=cc.n_restarts,
        min_cluster=cc.min_cluster,
        n_jobs=cfg.threads,
    )
    test_path = os.path.join(out, TEST_SET_CSV)
    if not os.path.exists(test_path):
        write_dataset(sel.test_samples, test_path)
    _dump_json({
        "format_version": FORMAT_VERSION,
        "best_k": sel.best_k,
        "test_fraction": cc.test_fraction,
        "entries": [
            {"k": e.k, "rmse": e.rmse, "status": e.status,
             "per_cluster": {str(i): v for i, v in sorted(e.per_cluster.items())},
             "cluster_sizes": [int(s) for s in e.cluster_sizes]}
            for e in sel.entries
        ],
    }, os.path.join(out, K_SELECTION_JSON))
    return {"best_k": sel.best_k,
            "rmse": {e.k: e.rmse for e in sel.entries}}


def _chosen_k(cfg: PipelineConfig, out: str) -> int:
    if cfg.clustering.k is not None:
        return int(cfg.clustering.k)
    return int(_load_json(os.path.join(out, K_SELECTION_JSON))["best_k"])


def stage_cluster(cfg: PipelineConfig, out: str) -> dict:
    """Partition the measurements at the chosen subregion count."""
    samples = _load_dataset(out)
    k = _chosen_k(cfg, out)
    part = kmeans_partition(
        samples, k,
        seed=_partition_seed(cfg, k),
        tol=cfg.clustering.tol,
        max_iter=cfg.clustering.max_iter,
        n_restarts=cfg.clustering.n_restarts,
    )
    save_partition(part, os.path.join(out, PARTITION_JSON))
    if os.path.exists(os.path.join(out, ENVIRONMENT_JSON)):
        _ensure_test_set(cfg, out)
    return {"k": k, "sizes": [int(s) for s in part.sizes]}


def stage_train(cfg: PipelineConfig, out: str, mode: str | None = None) -> dict:
    """Fit one regressor per subregion.

    ``mode`` forces "initial" (members only, into ``model_initial``) or
    "final" (assembled training sets over the augmented dataset, into
    ``model_final``); by default it is inferred from whether training sets
    exist on disk yet.
    """
    part = load_partition(os.path.join(out, PARTITION_JSON))
    sets_path = os.path.join(out, TRAINING_SETS_JSON)
    if mode is None:
        mode = "final" if os.path.exists(sets_path) else "initial"
    if mode == "final":
        doc = _load_json(sets_path)
        samples = _load_dataset(out, doc["dataset"])
        training_sets = [np.asarray(ix, dtype=np.int64)
                         for ix in doc["training_sets"]]
        subdir = MODEL_FINAL_DIR
    else:
        samples = _load_dataset(out)
        training_sets = None
        subdir = MODEL_INITIAL_DIR
    bounds = None
    if os.path.exists(os.path.join(out, ENVIRONMENT_JSON)):
        env = _load_environment(out)
        bounds = (env.spec.width, env.spec.height)
    model = train_subnetworks(
        samples, part, Architecture(), cfg.training.hyper(),
        master_seed=derive_seed(cfg.seed, f"train-{mode}"),
        training_sets=training_sets,
        bounds=bounds,
        n_jobs=cfg.threads,
    )
    save_model(model, os.path.join(out, subdir))
    return {"model": mode,
            "final_losses": [round(float(h[-1]), 6)
                             for h in model.loss_histories]}


def stage_resample(cfg: PipelineConfig, out: str) -> dict:
    """Allocate and draw the second, unevenly distributed campaign."""
    truth = _load_truth(out)
    samples = _load_dataset(out)
    part = load_partition(os.path.join(out, PARTITION_JSON))
    model = load_model(os.path.join(out, MODEL_INITIAL_DIR))
    test = _ensure_test_set(cfg, out)

    k = part.k
    variances = np.array([
        population_variance(samples[part.members(i), 4]) for i in range(k)
    ])
    preds = predict_points(model, test[:, 2:4])
    report = evaluate_rmse(preds, test[:, 4],
                           assign_geographic(test[:, 2:4], part))
    rmses = np.array([
        report.per_group.get(i, report.rmse) for i in range(k)
    ])

    fallback_even = False
    try:
        rates = compute_sampling_rates(part.sizes, variances, rmses)
    except DegenerateRatesError:
        rates = even_rates(k)
        fallback_even = True

    n_new = cfg.sampling.further_n
    if n_new is None:
        n_new = int(round(cfg.sampling.further_fraction * samples.shape[0]))
    counts = allocate_counts(int(n_new), rates)

    # the held-out cells join the exclusion set so fresh draws can never
    # land on a location the evaluation depends on
    existing = np.vstack([samples, test])
    new = resample_subregions(
        truth, part, counts, existing, derive_seed(cfg.seed, "resample"))
    write_dataset(new, os.path.join(out, DATASET_NEW_CSV))
    augmented = np.vstack([samples, new]) if len(new) else samples.copy()
    write_dataset(augmented, os.path.join(out, DATASET_AUGMENTED_CSV))
    _dump_json({
        "format_version": FORMAT_VERSION,
        "n_new": int(n_new),
        "fallback_even": fallback_even,
        "cluster_sizes": [int(s) for s in part.sizes],
        "gain_variances": [float(v) for v in variances],
        "test_rmses": [float(r) for r in rmses],
        "rates": [float(r) for r in rates],
        "counts": [int(c) for c in counts],
    }, os.path.join(out, SAMPLING_PLAN_JSON))
    return {"n_new": int(n_new), "counts": [int(c) for c in counts],
            "fallback_even": fallback_even}


def stage_reuse(cfg: PipelineConfig, out: str) -> dict:
    """Assemble per-subregion training sets over the augmented dataset.

    Boundary sharing is decided on the original campaign against the
    fitted partition; second-campaign rows then join the subregion that
    geographically contains them.
    """
    samples = _load_dataset(out)
    part = load_partition(os.path.join(out, PARTITION_JSON))
    m = samples.shape[0]
    aug_name = DATASET_AUGMENTED_CSV
    if os.path.exists(os.path.join(out, aug_name)):
        augmented = _load_dataset(out, aug_name)
    else:
        augmented = samples
        aug_name = DATASET_CSV

    if cfg.reuse.enabled:
        base_sets = reuse_boundary_points(samples, part,
                                          cfg.reuse.sigma_factor)
    else:
        base_sets = [part.members(i) for i in range(part.k)]

    if augmented.shape[0] > m:
        new_labels = assign_geographic(augmented[m:, 2:4], part)
    else:
        new_labels = np.empty(0, dtype=np.int64)
    sets = []
    for i in range(part.k):
        extra = m + np.flatnonzero(new_labels == i)
        sets.append(np.sort(np.concatenate([base_sets[i], extra])))

    _dump_json({
        "format_version": FORMAT_VERSION,
        "reuse_enabled": cfg.reuse.enabled,
        "sigma_factor": cfg.reuse.sigma_factor,
        "dataset": aug_name,
        "set_sizes": [int(s.size) for s in sets],
        "training_sets": [[int(j) for j in s] for s in sets],
    }, os.path.join(out, TRAINING_SETS_JSON))
    return {"set_sizes": [int(s.size) for s in sets]}


def _load_best_model(out: str):
    for sub in (MODEL_FINAL_DIR, MODEL_INITIAL_DIR):
        path = os.path.join(out, sub)
        if os.path.isdir(path):
            return load_model(path), sub
    raise MissingArtifactError("no trained model in the run directory")


def stage_predict(cfg: PipelineConfig, out: str) -> dict:
    """Evaluate the mapper on every outdoor cell and export the map."""
    env = _load_environment(out)
    model, which = _load_best_model(out)
    grid = predict_grid(model, env)
    write_grid_csv(grid, env, os.path.join(out, GRID_CSV))
    export_heatmap(grid, env.blocked, os.path.join(out, HEATMAP_PGM))
    return {"model": which, "cells": int((~env.blocked).sum())}


def stage_evaluate(cfg: PipelineConfig, out: str) -> dict:
    """Score the mapper and the interpolation baselines on held-out cells."""
    test = _ensure_test_set(cfg, out)
    locs = test[:, 2:4]
    truths = test[:, 4]
    part = load_partition(os.path.join(out, PARTITION_JSON))
    groups = assign_geographic(locs, part)

    fit_name = DATASET_AUGMENTED_CSV
    if not os.path.exists(os.path.join(out, fit_name)):
        fit_name = DATASET_CSV
    fit_set = _load_dataset(out, fit_name)

    def entry(preds: np.ndarray) -> dict:
        rep = evaluate_rmse(preds, truths, groups)
        return {
            "rmse": rep.rmse,
            "nrmse": bl.nrmse(preds, truths),
            "per_cluster": {str(i): v for i, v in sorted(rep.per_group.items())},
        }

    methods = {}
    model, which = _load_best_model(out)
    methods["subregional"] = entry(predict_points(model, locs))
    methods["subregional"]["model"] = which
    if which == MODEL_FINAL_DIR and os.path.isdir(
            os.path.join(out, MODEL_INITIAL_DIR)):
        initial = load_model(os.path.join(out, MODEL_INITIAL_DIR))
        methods["subregional_initial"] = entry(predict_points(initial, locs))

    if cfg.baselines.enabled:
        bc = cfg.baselines
        methods["idw"] = entry(bl.idw_predict(fit_set, locs, power=bc.idw_power))
        vario = bl.fit_variogram(fit_set, n_bins=bc.variogram_bins)
        preds, _, fallback = bl.kriging_predict(
            fit_set, vario, locs,
            neighborhood=bc.kriging_neighborhood, return_details=True)
        methods["kriging"] = entry(preds)
        methods["kriging"]["fallback_rows"] = int(fallback.sum())
        methods["kriging"]["variogram"] = {
            "nugget": vario.nugget, "sill": vario.sill,
            "range": vario.range_, "degenerate": vario.degenerate,
        }

    _dump_json({
        "format_version": FORMAT_VERSION,
        "n_test": int(test.shape[0]),
        "gain_range": float(truths.max() - truths.min()),
        "fit_dataset": fit_name,
        "methods": methods,
    }, os.path.join(out, EVALUATION_JSON))
    return {m: round(v["rmse"], 4) for m, v in methods.items()}


def stage_report(cfg: PipelineConfig, out: str) -> dict:
    """Fold the run's numeric artifacts into one summary document."""
    report = {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "config": yaml.safe_load(dump_config(cfg)),
    }
    for key, name in (
        ("k_selection", K_SELECTION_JSON),
        ("sampling_plan", SAMPLING_PLAN_JSON),
        ("training_sets", TRAINING_SETS_JSON),
        ("evaluation", EVALUATION_JSON),
    ):
        path = os.path.join(out, name)
        if os.path.exists(path):
            doc = _load_json(path)
            if key == "training_sets":
                # the index lists are large; the summary keeps their sizes
                doc = {k: v for k, v in doc.items() if k != "training_sets"}
            report[key] = doc
    report["artifacts"] = sorted(
        n for n in os.listdir(out) if n not in (REPORT_JSON, TIMINGS_JSON)
    )
    _dump_json(report, os.path.join(out, REPORT_JSON))
    return {"artifacts": len(report["artifacts"])}


_STAGE_FUNCS = {
    "generate": stage_generate,
    "sample": stage_sample,
    "sweep-k": stage_sweep_k,
    "cluster": stage_cluster,
    "train": stage_train,
    "resample": stage_resample,
    "reuse": stage_reuse,
    "train-final": lambda cfg, out: stage_train(cfg, out, mode="final"),
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def run_stage(name: str, cfg: PipelineConfig, out: str) -> dict:
    if name not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}; stages: {', '.join(STAGES)}")
    os.makedirs(out, exist_ok=True)
    return _STAGE_FUNCS[name](cfg, out)


def _plan(cfg: PipelineConfig) -> list[str]:
    plan = list(STAGES)
    if cfg.clustering.k is not None:
        plan.remove("sweep-k")
    if cfg.dataset is not None and cfg.environment is None:
        # measurement-only mode: no scene to generate, resample, or grid
        plan = [s for s in plan if s in
                ("sample", "cluster", "train", "reuse", "train-final",
                 "report")]
    return plan


def run_pipeline(cfg: PipelineConfig, out: str,
                 stop_after: str | None = None,
                 log=None) -> dict:
    """Run every stage in order, optionally stopping early.

    Returns the per-stage wall-clock timings; they are also written to
    ``timings.json``, which is the one artifact allowed to differ between
    otherwise identical runs.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ConfigError(
            f"unknown stage {stop_after!r}; stages: {', '.join(STAGES)}")
    os.makedirs(out, exist_ok=True)
    timings: dict[str, float] = {}
    for name in _plan(cfg):
        t0 = time.perf_counter()
        if name == "train":
            info = stage_train(cfg, out, mode="initial")
        else:
            info = run_stage(name, cfg, out)
        timings[name] = time.perf_counter() - t0
        if log is not None:
            log(f"[{name}] {timings[name]:.2f}s {info}")
        if name == stop_after:
            break
    _dump_json({k: round(v, 3) for k, v in timings.items()},
               os.path.join(out, TIMINGS_JSON))
    return timings