import numpy as np
import pytest

from app.exceptions import EmptyDataset, FormatError, InvalidParams
from app.models.detection_model import DetectorConfig, QuadrupleSet
from app.models.video_model import VideoConfig, VideoDataset
from app.models.world_model import Category
from app.services import detector_service, inverse_service, sim_service, video_service


@pytest.fixture
def facing_table(corridor_world):
    return sim_service.render(corridor_world, sim_service.cell_pose(corridor_world, (2, 12), 0))


@pytest.fixture
def labeled_videos(room_world):
    videos = video_service.generate_videos([room_world], VideoConfig(n_traj_per_world=4, max_steps=40), seed=9, world_ids=["room"])
    return inverse_service.with_true_labels(videos)


def test_perfect_detector_confidence(facing_table):
    detections = detector_service.detect(facing_table, detector_service.perfect_detector(), (0, 0))
    assert [d.category for d in detections] == [Category.DINING_TABLE]
    depths, classes = sim_service.decode(facing_table)
    hits = classes == int(Category.DINING_TABLE)
    expected = hits.sum() / 15 * (1.0 - depths[hits].min() / 5.0)
    assert detections[0].confidence == pytest.approx(expected)
    assert detections[0].est_distance == pytest.approx(float(np.median(depths[hits])))


def test_perfect_detector_stays_silent_on_empty_view(corridor_world):
    view = sim_service.render(corridor_world, sim_service.cell_pose(corridor_world, (2, 1), 180))
    for key in range(20):
        assert detector_service.detect(view, detector_service.perfect_detector(), key) == []


def test_detection_is_deterministic_per_key(facing_table):
    cfg = DetectorConfig(seed=4)
    a = detector_service.detect(facing_table, cfg, (1, 2))
    b = detector_service.detect(facing_table, cfg, (1, 2))
    assert a == b


def test_false_negatives_drop_detections(facing_table):
    always_miss = DetectorConfig(p_false_neg=0.999999, p_false_pos=0.0)
    assert detector_service.detect(facing_table, always_miss, 0) == []


def test_best_confidences_and_thresholds():
    confidences = np.array([
        [0.2, np.nan, np.nan, 0.9, np.nan],
        [0.4, np.nan, np.nan, 0.1, np.nan],
        [np.nan, np.nan, np.nan, 0.5, np.nan],
    ])
    thresholds = detector_service.reward_thresholds(confidences, 50.0)
    assert thresholds[0] == pytest.approx(0.3)
    assert thresholds[3] == pytest.approx(0.5)
    assert np.isinf(thresholds[1])


def test_label_rewards_shapes(labeled_videos):
    quads = detector_service.label_rewards(labeled_videos, DetectorConfig(seed=1), config_hash="cafe00000000")
    assert len(quads) == labeled_videos.n_pairs
    assert quads.labeled
    assert set(np.unique(quads.rewards).tolist()) <= {0.0, 1.0}
    assert quads.config_hash == "cafe00000000"
    assert quads.traj_ids is not None and quads.frame_idx is not None


def test_label_rewards_independent_of_jobs(labeled_videos):
    cfg = DetectorConfig(seed=1)
    serial = detector_service.label_rewards(labeled_videos, cfg, jobs=1)
    parallel = detector_service.label_rewards(labeled_videos, cfg, jobs=3)
    assert np.array_equal(serial.rewards, parallel.rewards)


def test_threshold_mode_and_bad_mode(labeled_videos):
    quads = detector_service.label_rewards(labeled_videos, detector_service.perfect_detector(), mode="threshold", threshold=1.01)
    assert quads.rewards.sum() == 0.0
    with pytest.raises(InvalidParams):
        detector_service.label_rewards(labeled_videos, mode="median")


def test_label_rewards_rejects_empty_dataset():
    with pytest.raises(EmptyDataset):
        detector_service.label_rewards(VideoDataset.create(privileged=True, kind="pseudo"))


def test_pose_rewards_match_success_region(room_world, labeled_videos):
    quads = detector_service.true_reward_label(labeled_videos, {"room": room_world})
    from app.models.sim_model import Pose
    from app.services.world_service import distance_to_success

    row = 0
    for index, traj in enumerate(labeled_videos.trajectories):
        poses = labeled_videos.hidden_poses(index)
        for t in range(1, traj.length):
            x, y, h = poses[t]
            inside = distance_to_success(room_world, Pose(x=x, y=y, heading=int(h)), Category.BED) == 0.0
            assert quads.rewards[row, int(Category.BED)] == float(inside)
            row += 1


def test_quadruple_file_round_trip(tmp_path):
    quads = QuadrupleSet(
        obs=[[0.5, 0.25], [0.1, 0.2]],
        actions=[0, 2],
        next_obs=[[0.1, 0.2], [0.3, 0.4]],
        rewards=[[0, 0, 0, 1, 0], [1, 0, 0, 0, 0]],
        traj_ids=[7, 7],
        frame_idx=[0, 1],
        config_hash="0123456789ab",
    )
    path = tmp_path / "quads.txt"
    detector_service.save_quadruples(quads, str(path))
    assert path.read_text().splitlines()[0] == "VLVQUAD 1 0123456789ab 2"
    loaded = detector_service.load_quadruples(str(path))
    assert np.array_equal(loaded.obs, quads.obs)
    assert np.array_equal(loaded.rewards, quads.rewards)
    assert loaded.traj_ids.tolist() == [7, 7]
    assert loaded.config_hash == "0123456789ab"


def test_quadruple_file_bad_field_count():
    lines = ["VLVQUAD 1 - 1", "0.5 0 0.25 0 0 0 1 0", "0.5 0 0.25 0 0 1"]
    with pytest.raises(FormatError) as excinfo:
        detector_service.parse_quadruples(lines)
    assert excinfo.value.line == 3


def test_spurious_detection_rate_on_empty_frames(corridor_world):
    view = sim_service.render(corridor_world, sim_service.cell_pose(corridor_world, (2, 1), 180))
    cfg = DetectorConfig(p_false_neg=0.0, p_false_pos=0.02, seed=3)
    n = 10_000
    counts = np.zeros(5)
    for key in range(n):
        for det in detector_service.detect(view, cfg, key):
            counts[int(det.category)] += 1
            assert 0.3 <= det.confidence <= 0.7
            assert 0.5 <= det.est_distance <= 5.0
    assert np.all(np.abs(counts / n - 0.02) <= 0.005)


def test_noise_free_detector_fires_for_visible_categories(room_world):
    rng = np.random.default_rng(12)
    cfg = detector_service.perfect_detector()
    for key in range(60):
        pose = video_service.random_pose(room_world, rng)
        detections = {d.category: d for d in detector_service.detect(sim_service.render(room_world, pose), cfg, key)}
        for category in Category:
            seen = sim_service.visible(room_world, pose, category)
            assert (category in detections) == seen.visible
            if seen.visible:
                assert detections[category].est_distance == pytest.approx(seen.distance)


def test_top_decile_of_distinct_confidences_rewards_ten_frames():
    confidences = np.full((100, 5), np.nan)
    confidences[:, int(Category.BED)] = np.random.default_rng(0).permutation(100) / 100.0 + 0.001
    cutoffs = detector_service.reward_thresholds(confidences, 90.0)
    with np.errstate(invalid="ignore"):
        rewarded = confidences >= cutoffs
    assert rewarded[:, int(Category.BED)].sum() == 10
    assert rewarded.sum() == 10


def test_duplicating_the_dataset_keeps_the_reward_set(labeled_videos):
    cfg = DetectorConfig(seed=2)
    confidences = np.vstack([
        detector_service.best_confidences(detector_service.detect(obs, cfg, (traj.traj_id, t)))
        for traj in labeled_videos.trajectories
        for t, obs in enumerate(traj.observations)
    ])
    once = detector_service.reward_thresholds(confidences)
    twice = detector_service.reward_thresholds(np.vstack([confidences, confidences]))
    with np.errstate(invalid="ignore"):
        assert np.array_equal(confidences >= once, confidences >= twice)
