"""One-step inverse model and pseudo-labeling of action-free videos"""
import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel

from app.exceptions import InsufficientData, InvalidParams, PrivilegedAccessError
from app.models.network_model import Mlp, AdamState
from app.models.sim_model import OBS_DIM, N_MOVE_ACTIONS
from app.models.training_model import InverseTrainConfig
from app.models.video_model import VideoDataset
from app.services import nn_service

logger = logging.getLogger(__name__)


class InverseModel(BaseModel):
    """Classifier over concatenated (o_t, o_t+1) predicting Forward / Left / Right"""

    net: Mlp
    val_accuracy: float = 0.0

    class Config:
        arbitrary_types_allowed = True

    def logits(self, obs: np.ndarray, next_obs: np.ndarray) -> np.ndarray:
        pairs = np.hstack([np.atleast_2d(obs)[:, :OBS_DIM], np.atleast_2d(next_obs)[:, :OBS_DIM]])
        return nn_service.forward(self.net, pairs)

    def predict(self, obs: np.ndarray, next_obs: np.ndarray) -> np.ndarray:
        # np.argmax keeps the lowest action code on ties
        return np.argmax(self.logits(obs, next_obs), axis=1)


def _pairs(dataset: VideoDataset) -> Tuple[np.ndarray, np.ndarray]:
    obs, nxt, labels = dataset.frame_pairs()
    if len(labels) and np.any(labels < 0):
        raise InvalidParams("inverse-model training needs action labels on every transition")
    return np.hstack([obs[:, :OBS_DIM], nxt[:, :OBS_DIM]]), labels


def accuracy(model: InverseModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    predictions = np.argmax(nn_service.forward(model.net, inputs), axis=1)
    return float(np.mean(predictions == labels))


def train_inverse(interaction: VideoDataset, cfg: Optional[InverseTrainConfig] = None) -> InverseModel:
    """Cross-entropy training on a seeded 90/10 split; returns the model with its held-out accuracy"""
    cfg = cfg or InverseTrainConfig()
    inputs, labels = _pairs(interaction)
    n = len(labels)
    if n < cfg.min_transitions:
        raise InsufficientData(f"inverse model needs at least {cfg.min_transitions} transitions, got {n}")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    net = nn_service.init_mlp((2 * OBS_DIM, *cfg.hidden_sizes, N_MOVE_ACTIONS), rng, zero_output=False)
    state = AdamState(lr=cfg.learning_rate)
    model = InverseModel(net=net)

    for epoch in range(cfg.epochs):
        shuffled = rng.permutation(train_idx)
        total, batches = 0.0, 0
        for start in range(0, len(shuffled), cfg.batch_size):
            batch = shuffled[start:start + cfg.batch_size]
            logits = nn_service.forward(net, inputs[batch])
            loss, grad = nn_service.cross_entropy(logits, labels[batch])
            nn_service.adam_step(net, nn_service.backward(net, inputs[batch], grad), state)
            total += loss
            batches += 1
        val_acc = accuracy(model, inputs[val_idx], labels[val_idx])
        logger.info(f"Inverse model epoch {epoch + 1}/{cfg.epochs}: loss {total / max(batches, 1):.4f}, val accuracy {val_acc:.4f}")

    model.val_accuracy = accuracy(model, inputs[val_idx], labels[val_idx])
    return model


def pseudo_label(model: InverseModel, videos: VideoDataset) -> VideoDataset:
    """Label every consecutive frame pair with the inverse model's argmax; reads observations only"""
    labeled = []
    for traj in videos.trajectories:
        predicted = model.predict(traj.observations[:-1], traj.observations[1:])
        labeled.append(traj.with_actions(predicted))
    result = videos.derive(kind="pseudo", trajectories=labeled)
    logger.info(f"Pseudo-labeled {result.n_pairs} frame pairs in {len(labeled)} trajectories")
    return result


def label_agreement(labeled: VideoDataset) -> float:
    """Fraction of pseudo labels equal to the hidden true actions; needs a privileged handle"""
    if not labeled.privileged:
        raise PrivilegedAccessError("label agreement compares against hidden actions")
    matches, total = 0, 0
    for index, traj in enumerate(labeled.trajectories):
        truth = labeled.hidden_actions(index)
        if truth is None or traj.actions is None:
            continue
        matches += int(np.sum(traj.actions == truth))
        total += len(truth)
    return matches / total if total else 0.0


def with_true_labels(videos: VideoDataset) -> VideoDataset:
    """Replace labels by the hidden true actions (privileged handles only)"""
    labeled = []
    for index, traj in enumerate(videos.trajectories):
        truth = videos.hidden_actions(index)
        if truth is None:
            raise InvalidParams(f"trajectory {traj.traj_id} carries no hidden actions")
        labeled.append(traj.with_actions(truth))
    return videos.derive(kind="pseudo", trajectories=labeled)


def save_inverse(model: InverseModel, path: str, config_hash: str = "") -> None:
    nn_service.save_mlp(model.net, path, "inverse", config_hash)


def load_inverse(path: str) -> Tuple[InverseModel, str]:
    net, kind, config_hash = nn_service.load_mlp(path)
    if kind != "inverse" or net.input_size != 2 * OBS_DIM or net.output_size != N_MOVE_ACTIONS:
        raise InvalidParams(f"{path} does not hold an inverse model")
    return InverseModel(net=net), config_hash
