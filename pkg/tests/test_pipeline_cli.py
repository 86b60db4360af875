import json
import os

import numpy as np
import pytest
import yaml

from gainmap.cli import main
from gainmap.pipeline import (
    ConfigError,
    PipelineConfig,
    _plan,
    dump_config,
    environment_from_config,
    load_config,
    run_pipeline,
)
from gainmap.scenario import write_dataset
from gainmap.seeding import derive_seed

from conftest import make_samples

TINY_ENVIRONMENT = {
    "width": 40.0,
    "height": 40.0,
    "grid_step": 2.0,
    "bs_position": [20.0, 20.0, 15.0],
    "buildings": [
        {"x_min": 4.0, "y_min": 4.0, "x_max": 12.0, "y_max": 14.0,
         "height": 12.0},
        {"x_min": 26.0, "y_min": 24.0, "x_max": 36.0, "y_max": 32.0,
         "height": 18.0},
    ],
    "propagation": {
        "shadow_sigma_los_db": 3.0,
        "shadow_sigma_nlos_db": 5.0,
        "shadow_corr_dist": 8.0,
    },
}


def tiny_config_doc(seed=5):
    return {
        "schema_version": 1,
        "seed": seed,
        "environment": TINY_ENVIRONMENT,
        "sampling": {"m_scgm": 60, "further_fraction": 0.25},
        "clustering": {"k": 2, "n_restarts": 4},
        "training": {"epochs": 30},
    }


def write_config(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def tree_bytes(root, skip=("timings.json",)):
    """{relative path: bytes} for every file under root."""
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            if name in skip:
                continue
            full = os.path.join(base, name)
            rel = os.path.relpath(full, root)
            with open(full, "rb") as fh:
                out[rel] = fh.read()
    return out


# ------------------------------------------------------- config loading


def test_config_round_trip(tmp_path):
    cfg = load_config(write_config(tmp_path, tiny_config_doc()))
    assert cfg.seed == 5
    assert cfg.sampling.m_scgm == 60
    assert cfg.clustering.k == 2
    assert cfg.training.epochs == 30
    again = yaml.safe_load(dump_config(cfg))
    assert again["seed"] == 5
    assert again["clustering"]["k"] == 2
    assert again["schema_version"] == 1


def test_config_rejects_unknown_top_level_keys(tmp_path):
    doc = tiny_config_doc()
    doc["typo_key"] = 1
    with pytest.raises(ConfigError, match="typo_key"):
        load_config(write_config(tmp_path, doc))


def test_config_rejects_unknown_section_keys(tmp_path):
    doc = tiny_config_doc()
    doc["training"]["lr"] = 0.1
    with pytest.raises(ConfigError, match="training.*lr"):
        load_config(write_config(tmp_path, doc))


def test_config_requires_the_exact_schema_version(tmp_path):
    doc = tiny_config_doc()
    doc["schema_version"] = 7
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(write_config(tmp_path, doc))
    del doc["schema_version"]
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(write_config(tmp_path, doc, name="two.yaml"))


def test_config_rejects_malformed_k_range(tmp_path):
    doc = tiny_config_doc()
    doc["clustering"] = {"k_range": [1, 2, 3]}
    with pytest.raises(ConfigError, match="k_range"):
        load_config(write_config(tmp_path, doc))


def test_config_rejects_negative_seed(tmp_path):
    doc = tiny_config_doc(seed=-4)
    with pytest.raises(ConfigError, match="seed"):
        load_config(write_config(tmp_path, doc))


def test_config_needs_a_scene_or_a_dataset(tmp_path):
    doc = tiny_config_doc()
    del doc["environment"]
    with pytest.raises(ConfigError, match="environment.*dataset"):
        load_config(write_config(tmp_path, doc))


def test_measurement_only_config_needs_a_fixed_k(tmp_path):
    rows = make_samples(np.linspace(-50, -80, 30), bs=(20.0, 20.0))
    data = tmp_path / "field.csv"
    write_dataset(rows, data)
    doc = tiny_config_doc()
    del doc["environment"]
    doc["dataset"] = str(data)
    doc["clustering"] = {}  # no fixed k
    with pytest.raises(ConfigError, match="fixed clustering.k"):
        load_config(write_config(tmp_path, doc))


def test_config_rejects_a_missing_dataset_path(tmp_path):
    doc = tiny_config_doc()
    doc["dataset"] = str(tmp_path / "nope.csv")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(write_config(tmp_path, doc))


# ------------------------------------------------- environment resolve


def test_environment_defaults():
    spec = environment_from_config(PipelineConfig(seed=3, environment={}))
    assert spec.width == 470.0
    assert spec.height == 630.0
    assert spec.grid_step == 1.0
    assert spec.bs_position == (120.0, 540.0, 164.0)
    assert spec.carrier_frequency == 4800.0
    assert spec.sample_height == 1.5
    assert spec.buildings == ()
    assert spec.seed == derive_seed(3, "environment")


def test_environment_rejects_both_building_sources():
    cfg = PipelineConfig(environment={
        "buildings": [{"x_min": 0, "y_min": 0, "x_max": 5, "y_max": 5,
                       "height": 10}],
        "random_buildings": {"count": 3},
    })
    with pytest.raises(ConfigError, match="not both"):
        environment_from_config(cfg)


def test_environment_random_buildings_needs_a_count():
    cfg = PipelineConfig(environment={"random_buildings": {}})
    with pytest.raises(ConfigError, match="count"):
        environment_from_config(cfg)


def test_environment_random_buildings_keep_the_bs_outdoors():
    cfg = PipelineConfig(seed=9, environment={
        "width": 100.0, "height": 100.0,
        "bs_position": [50.0, 50.0, 20.0],
        "random_buildings": {"count": 6},
    })
    spec = environment_from_config(cfg)
    assert len(spec.buildings) == 6
    for b in spec.buildings:
        assert not (b.x_min <= 50.0 <= b.x_max and b.y_min <= 50.0 <= b.y_max)
    # the footprint draw is keyed off the master seed
    other = environment_from_config(
        PipelineConfig(seed=10, environment=dict(cfg.environment)))
    assert [b.x_min for b in spec.buildings] != [b.x_min for b in other.buildings]


# ------------------------------------------------------------ full runs


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One completed full run on the tiny scene, shared across tests."""
    tmp = tmp_path_factory.mktemp("tiny")
    cfg = load_config(write_config(tmp, tiny_config_doc()))
    out = tmp / "run"
    timings = run_pipeline(cfg, str(out))
    return cfg, out, timings


def test_full_run_produces_every_expected_artifact(tiny_run):
    _, out, timings = tiny_run
    expected = [
        "environment.json", "ground_truth.csv", "ground_truth.pgm",
        "dataset.csv", "test_set.csv", "partition.json",
        "model_initial/manifest.json", "model_final/manifest.json",
        "sampling_plan.json", "dataset_new.csv", "dataset_augmented.csv",
        "training_sets.json", "grid.csv", "heatmap.pgm",
        "evaluation.json", "report.json", "timings.json",
    ]
    for name in expected:
        assert (out / name).exists(), name
    # a fixed k skips the sweep entirely
    assert not (out / "k_selection.json").exists()
    assert "sweep-k" not in timings
    assert list(timings) == [
        "generate", "sample", "cluster", "train", "resample", "reuse",
        "train-final", "predict", "evaluate", "report",
    ]


def test_full_run_wrote_consistent_artifacts(tiny_run):
    cfg, out, _ = tiny_run
    plan = json.loads((out / "sampling_plan.json").read_text())
    assert plan["n_new"] == 15  # 0.25 of 60
    assert sum(plan["counts"]) == 15
    evaluation = json.loads((out / "evaluation.json").read_text())
    for method in ("subregional", "idw", "kriging"):
        assert method in evaluation["methods"]
        assert evaluation["methods"][method]["rmse"] > 0.0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == cfg.seed
    assert report["config"]["clustering"]["k"] == 2
    assert "training_sets" not in report["training_sets"]
    assert report["evaluation"] == evaluation


def test_repeating_a_run_reproduces_every_artifact_byte(tiny_run, tmp_path):
    cfg, out, _ = tiny_run
    again = tmp_path / "again"
    run_pipeline(cfg, str(again))
    a = tree_bytes(out)
    b = tree_bytes(again)
    assert sorted(a) == sorted(b)
    for rel in a:
        assert a[rel] == b[rel], f"{rel} differs between identical runs"


def test_stop_after_halts_the_plan(tmp_path):
    cfg = load_config(write_config(tmp_path, tiny_config_doc()))
    out = tmp_path / "partial"
    timings = run_pipeline(cfg, str(out), stop_after="cluster")
    assert list(timings) == ["generate", "sample", "cluster"]
    assert (out / "partition.json").exists()
    assert not (out / "model_initial").exists()
    with pytest.raises(ConfigError, match="unknown stage"):
        run_pipeline(cfg, str(out), stop_after="polish")


def test_measurement_only_plan_and_run(tmp_path):
    rng = np.random.default_rng(33)
    xy = rng.uniform(0.0, 60.0, size=(80, 2))
    gains = -50.0 - 0.5 * xy[:, 0] + 0.2 * xy[:, 1]
    rows = make_samples(gains, xs=xy[:, 0], ys=xy[:, 1], bs=(30.0, 30.0))
    data = tmp_path / "field.csv"
    write_dataset(rows, data)

    doc = tiny_config_doc()
    del doc["environment"]
    doc["dataset"] = str(data)
    cfg = load_config(write_config(tmp_path, doc))
    assert _plan(cfg) == ["sample", "cluster", "train", "reuse",
                          "train-final", "report"]
    out = tmp_path / "run"
    run_pipeline(cfg, str(out))
    assert (out / "model_final" / "manifest.json").exists()
    # nothing scene-dependent can exist without a scene
    assert not (out / "ground_truth.csv").exists()
    assert not (out / "grid.csv").exists()
    assert not (out / "evaluation.json").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["training_sets"]["dataset"] == "dataset.csv"


def test_plan_skips_the_sweep_only_for_fixed_k(tmp_path):
    cfg = load_config(write_config(tmp_path, tiny_config_doc()))
    assert "sweep-k" not in _plan(cfg)
    doc = tiny_config_doc()
    doc["clustering"] = {"k_range": [1, 4]}
    cfg = load_config(write_config(tmp_path, doc, name="sweep.yaml"))
    assert "sweep-k" in _plan(cfg)


# ------------------------------------------------------------------ CLI


def test_cli_runs_stages_and_reports_success(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tiny_config_doc())
    out = tmp_path / "cli-run"
    rc = main(["full-run", "--config", str(cfg_path), "--out", str(out),
               "--stage", "sample"])
    assert rc == 0
    assert (out / "dataset.csv").exists()
    shown = capsys.readouterr().out
    assert "[generate]" in shown and "[sample]" in shown


def test_cli_single_stage_against_existing_artifacts(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tiny_config_doc())
    out = tmp_path / "cli-run"
    assert main(["full-run", "--config", str(cfg_path), "--out", str(out),
                 "--stage", "sample"]) == 0
    assert main(["cluster", "--config", str(cfg_path),
                 "--out", str(out)]) == 0
    assert (out / "partition.json").exists()
    assert "[cluster]" in capsys.readouterr().out


def test_cli_rejects_bad_configs_with_exit_code_2(tmp_path, capsys):
    doc = tiny_config_doc()
    doc["schema_version"] = 99
    cfg_path = write_config(tmp_path, doc)
    rc = main(["full-run", "--config", str(cfg_path),
               "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_cli_rejects_bad_flag_values(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tiny_config_doc())
    out = str(tmp_path / "x")
    assert main(["generate", "--config", str(cfg_path), "--out", out,
                 "--seed", "-1"]) == 2
    assert main(["generate", "--config", str(cfg_path), "--out", out,
                 "--threads", "0"]) == 2
    errs = capsys.readouterr().err
    assert errs.count("error:") == 2


def test_cli_requires_a_run_directory(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tiny_config_doc())
    rc = main(["generate", "--config", str(cfg_path)])
    assert rc == 2
    assert "run directory" in capsys.readouterr().err


def test_cli_seed_override_changes_the_campaign(tmp_path):
    cfg_path = write_config(tmp_path, tiny_config_doc())
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["full-run", "--config", str(cfg_path),
                 "--out", str(out_a), "--stage", "sample"]) == 0
    assert main(["full-run", "--config", str(cfg_path), "--seed", "77",
                 "--out", str(out_b), "--stage", "sample"]) == 0
    assert (out_a / "dataset.csv").read_bytes() != (
        out_b / "dataset.csv").read_bytes()
