import logging
import os

import pytest
from pydantic import ValidationError

from app.exceptions import HashMismatch, InvalidParams, IoFailure
from app.models.run_model import RunConfig
from app.models.training_model import QTrainConfig
from app.services import pipeline_service
from app.services.artifact_service import read_report
from app.services.pipeline_service import Workspace

SMALL_RUN = {
    "world": {"width": "24", "height": "24", "rooms": "2", "min_room_size": "7", "max_room_size": "10"},
    "split": {"n_train_worlds": "1", "n_video_worlds": "1", "n_test_worlds": "1"},
    "video": {"n_traj_per_world": "3", "max_steps": "30", "interaction_frames": "1200"},
    "inverse": {"hidden_sizes": "32", "epochs": "1"},
    "qlearn": {"tabular": "true"},
    "value": {"tabular": "true"},
}


def test_config_hash_is_stable():
    run = RunConfig(seed=3, overrides={"qlearn": {"gamma": "0.9"}})
    digest = run.config_hash()
    assert len(digest) == 12 and int(digest, 16) >= 0
    assert RunConfig(seed=3, overrides={"qlearn": {"gamma": "0.9"}}, jobs=4, work_dir="elsewhere").config_hash() == digest
    assert RunConfig(seed=4, overrides={"qlearn": {"gamma": "0.9"}}).config_hash() != digest
    assert RunConfig(seed=3).config_hash() != digest


def test_validate_overrides():
    pipeline_service.validate_overrides(RunConfig(overrides={"nav": {"budget": "200"}}))
    with pytest.raises(InvalidParams):
        pipeline_service.validate_overrides(RunConfig(overrides={"planner": {"budget": "1"}}))
    with pytest.raises(InvalidParams):
        pipeline_service.validate_overrides(RunConfig(overrides={"nav": {"budgett": "1"}}))
    with pytest.raises(ValidationError):
        pipeline_service.validate_overrides(RunConfig(overrides={"qlearn": {"gamma": "1.5"}}))


def test_world_seeds_differ_per_split():
    seeds = {pipeline_service.world_seed(7, split, i) for split in ("train", "video", "test") for i in range(3)}
    assert len(seeds) == 9
    assert pipeline_service.world_seed(7, "test", 0) == pipeline_service.world_seed(7, "test", 0)


def test_workspace_hash_policy(tmp_path, caplog):
    ws = Workspace(RunConfig(work_dir=str(tmp_path)))
    with pytest.raises(IoFailure):
        ws.require("quads.txt")
    with caplog.at_level(logging.WARNING):
        ws.check_hash("ffffffffffff", "quads.txt")
    assert "ffffffffffff" in caplog.text
    ws.strict = True
    with pytest.raises(HashMismatch):
        ws.check_hash("ffffffffffff", "quads.txt")
    ws.check_hash(ws.config_hash, "quads.txt")


def test_missing_worlds(tmp_path):
    with pytest.raises(IoFailure):
        pipeline_service.load_split(Workspace(RunConfig(work_dir=str(tmp_path))), "test")


def test_stop_config_defaults_without_file(tmp_path):
    cfg = pipeline_service.load_stop(Workspace(RunConfig(work_dir=str(tmp_path))))
    assert cfg.tau_c == 0.75


def test_unknown_baseline(tmp_path):
    with pytest.raises(InvalidParams):
        pipeline_service.train_baseline(Workspace(RunConfig(work_dir=str(tmp_path))), "sarsa")


def test_data_and_learning_stages(tmp_path):
    """Worlds through tabular Q on a miniature run; every artifact carries the run's hash"""
    ws = Workspace(RunConfig(seed=5, work_dir=str(tmp_path), overrides=SMALL_RUN))
    paths = pipeline_service.gen_worlds(ws)
    assert {k: len(v) for k, v in paths.items()} == {"train": 1, "video": 1, "test": 1}
    worlds, ids = pipeline_service.load_split(ws, "video")
    assert ids == ["video_000"]

    pipeline_service.collect_interaction(ws)
    pipeline_service.gen_videos(ws)
    pipeline_service.train_inverse(ws)
    labeled = pipeline_service.pseudo_label(ws)
    assert labeled.labeled
    quads = pipeline_service.label_rewards(ws)
    assert quads.config_hash == ws.config_hash
    pipeline_service.train_q(ws)
    td0 = pipeline_service.train_baseline(ws, "td0")

    for name in ("interaction.txt", "videos.txt", "inverse.txt", "pseudo.txt", "quads.txt", "q.txt", "td0.txt"):
        assert os.path.exists(ws.path(name)), name
    report = read_report(ws.path("reports", "traineval.txt"))
    assert report["config_hash"] == ws.config_hash
    assert int(report["traineval.quadruples"]) == len(quads)
    assert pipeline_service.load_model(ws, "td0").input_size == td0.input_size

    other = Workspace(RunConfig(seed=6, work_dir=str(tmp_path), overrides=SMALL_RUN), strict=True)
    with pytest.raises(HashMismatch):
        pipeline_service.load_quadruples(other)


def test_stage_overrides_win_over_run_defaults():
    run = RunConfig(overrides={"qlearn": {"seed": "3"}})
    assert run.stage("qlearn", QTrainConfig, seed=7).seed == 3
    assert RunConfig().stage("qlearn", QTrainConfig, seed=7).seed == 7
    assert run.stage("qlearn", QTrainConfig).gamma == QTrainConfig().gamma


def _artifacts(root):
    files = {}
    for directory, _, names in os.walk(root):
        for name in names:
            path = os.path.join(directory, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


def test_same_seed_gives_identical_artifacts(tmp_path):
    """Worker count and directory never leak into the artifacts"""
    for name, jobs in (("first", 1), ("second", 3)):
        ws = Workspace(RunConfig(seed=7, jobs=jobs, work_dir=str(tmp_path / name), overrides=SMALL_RUN))
        pipeline_service.gen_worlds(ws)
        pipeline_service.collect_interaction(ws)
        pipeline_service.gen_videos(ws)
        pipeline_service.train_inverse(ws)
        pipeline_service.pseudo_label(ws)
        pipeline_service.label_rewards(ws)
        pipeline_service.train_q(ws)
        pipeline_service.train_baseline(ws, "td0")
    first, second = _artifacts(tmp_path / "first"), _artifacts(tmp_path / "second")
    assert "q.txt" in first
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name
