import numpy as np
import pytest

from app.exceptions import FormatError, InvalidParams, PrivilegedAccessError
from app.models.sim_model import Action, OBS_DIM, Pose
from app.models.video_model import VideoConfig
from app.services import sim_service, video_service

SMALL = VideoConfig(n_traj_per_world=3, noise_p=0.0, max_steps=60)


@pytest.fixture
def videos(room_world):
    return video_service.generate_videos([room_world], SMALL, seed=5, world_ids=["room"])


def test_videos_are_action_free(videos):
    assert len(videos.trajectories) == 3
    for traj in videos.trajectories:
        assert traj.actions is None
        assert traj.observations.shape[1] == OBS_DIM
        assert traj.world_id == "room"
    assert videos.privileged


def test_hidden_truth_needs_privilege(videos):
    assert len(videos.hidden_actions(0)) == videos.trajectories[0].length - 1
    public = videos.public_view()
    assert not public.privileged
    with pytest.raises(PrivilegedAccessError):
        public.hidden_actions(0)
    with pytest.raises(PrivilegedAccessError):
        public.hidden_poses(0)


def test_noise_free_tour_replays(room_world, videos):
    """Stepping the hidden actions from the first hidden pose reproduces every hidden pose"""
    for index, traj in enumerate(videos.trajectories):
        poses = videos.hidden_poses(index)
        pose = Pose(x=poses[0][0], y=poses[0][1], heading=int(poses[0][2]))
        for t, action in enumerate(videos.hidden_actions(index)):
            pose = sim_service.step(room_world, pose, Action(int(action)))
            assert (pose.x, pose.y, pose.heading) == pytest.approx(tuple(poses[t + 1]))
            assert np.array_equal(traj.observations[t + 1], sim_service.render(room_world, pose))


def test_generation_is_deterministic(room_world, videos):
    again = video_service.generate_videos([room_world], SMALL, seed=5, world_ids=["room"])
    for a, b in zip(videos.trajectories, again.trajectories):
        assert np.array_equal(a.observations, b.observations)


def test_generation_needs_worlds():
    with pytest.raises(InvalidParams):
        video_service.generate_videos([], SMALL)


def test_stride_subsamples(room_world):
    strided = video_service.generate_videos([room_world], SMALL.model_copy(update={"stride": 2}), seed=5)
    full = video_service.generate_videos([room_world], SMALL, seed=5)
    for a, b in zip(strided.trajectories, full.trajectories):
        assert a.length == len(range(0, b.length, 2)) + (0 if (b.length - 1) % 2 == 0 else 1)
        assert np.array_equal(a.observations[0], b.observations[0])
        assert np.array_equal(a.observations[-1], b.observations[-1])


def test_interaction_has_exact_frame_count(room_world):
    data = video_service.collect_interaction([room_world], n_frames=45, seed=2)
    assert data.n_pairs == 45
    assert data.labeled
    obs, nxt, labels = data.frame_pairs()
    assert obs.shape == nxt.shape == (45, OBS_DIM)
    assert set(labels.tolist()) <= {0, 1, 2}


def test_interaction_rejects_zero_frames(room_world):
    with pytest.raises(InvalidParams):
        video_service.collect_interaction([room_world], n_frames=0)


def test_dataset_file_round_trip(tmp_path, videos):
    path = tmp_path / "videos.txt"
    video_service.save_dataset(videos.derive(config_hash="feedbeef0001"), str(path))
    loaded = video_service.load_dataset(str(path))
    assert loaded.config_hash == "feedbeef0001"
    assert loaded.n_frames == videos.n_frames
    assert loaded.privileged
    for index, (a, b) in enumerate(zip(loaded.trajectories, videos.trajectories)):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(loaded.hidden_actions(index), videos.hidden_actions(index))


def test_public_dataset_file_hides_truth(tmp_path, videos):
    path = tmp_path / "public.txt"
    video_service.save_dataset(videos.public_view(), str(path))
    text = path.read_text()
    assert " T:" not in text and " P:" not in text
    assert not video_service.load_dataset(str(path)).privileged


def test_truncated_dataset_file(videos):
    lines = video_service.dataset_lines(videos)[:-1]
    with pytest.raises(FormatError):
        video_service.parse_dataset(lines)
