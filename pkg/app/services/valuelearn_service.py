"""Value learners: Double-DQN Q-learning, TD(0) / Monte Carlo policy evaluation,
strong supervision from the pose-graph oracle and behavior cloning.

Every learned model exposes ``values(obs) -> (N, 5)``, the per-category value of a
batch of observations, and ``input_size``. Navigation only relies on that pair.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from app.config.hyperparameters import QLEARN_CONFIG
from app.exceptions import FormatError, InsufficientData, InvalidParams, ShapeMismatch
from app.models.detection_model import QuadrupleSet
from app.models.network_model import AdamState, Mlp
from app.models.sim_model import N_HEADINGS, N_MOVE_ACTIONS, OBS_DIM
from app.models.training_model import (
    BCTrainConfig,
    QTrainConfig,
    SupervisionSet,
    TrainingCurve,
    ValueTrainConfig,
)
from app.models.world_model import Category, GridWorld, N_CATEGORIES
from app.services import nn_service, sim_service
from app.services.artifact_service import (
    format_floats,
    header_line,
    parse_floats,
    parse_header,
    read_lines,
    write_lines,
)
from app.services.world_service import oracle_steps, pose_graph

logger = logging.getLogger(__name__)

N_Q_OUTPUTS = N_MOVE_ACTIONS * N_CATEGORIES


def bellman_target(reward, q_next_max, gamma: float):
    """clip(r + gamma * max_a' Q(o', a'), 0, 1); scalars in, scalar out"""
    target = np.clip(np.asarray(reward, dtype=np.float64) + gamma * np.asarray(q_next_max, dtype=np.float64), 0.0, 1.0)
    return float(target) if target.ndim == 0 else target


def _key(row: np.ndarray) -> bytes:
    return np.ascontiguousarray(row, dtype=np.float64).tobytes()


def _batch(obs: np.ndarray, input_size: int) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if batch.shape[1] != input_size:
        raise ShapeMismatch(f"observation has {batch.shape[1]} features, model expects {input_size}")
    return batch


# ---------------------------------------------------------------------------
# Value models
# ---------------------------------------------------------------------------

class QFunction(BaseModel):
    """Network with 15 outputs read as 3 actions x 5 categories (index action * 5 + category)"""

    net: Mlp
    training_log: TrainingCurve = Field(default_factory=TrainingCurve)

    class Config:
        arbitrary_types_allowed = True

    @property
    def input_size(self) -> int:
        return self.net.input_size

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        out = nn_service.forward(self.net, _batch(obs, self.input_size))
        return out.reshape(-1, N_MOVE_ACTIONS, N_CATEGORIES)

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.q_values(obs).max(axis=1)


class TabularQFunction(BaseModel):
    """One (3, 5) row per distinct observation; unseen observations have Q = 0"""

    obs_dim: int
    table: Dict[bytes, np.ndarray] = Field(default_factory=dict)
    training_log: TrainingCurve = Field(default_factory=TrainingCurve)

    class Config:
        arbitrary_types_allowed = True

    @property
    def input_size(self) -> int:
        return self.obs_dim

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        zero = np.zeros((N_MOVE_ACTIONS, N_CATEGORIES))
        return np.stack([self.table.get(_key(row), zero) for row in _batch(obs, self.obs_dim)])

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.q_values(obs).max(axis=1)


class ValueTable(BaseModel):
    """State values per category, either a table keyed by observation or a 5-output network"""

    kind: str = Field("td0", description="td0 | mc")
    obs_dim: int
    table: Optional[Dict[bytes, np.ndarray]] = None
    net: Optional[Mlp] = None

    class Config:
        arbitrary_types_allowed = True

    @property
    def input_size(self) -> int:
        return self.obs_dim

    @property
    def tabular(self) -> bool:
        return self.table is not None

    def values(self, obs: np.ndarray) -> np.ndarray:
        batch = _batch(obs, self.obs_dim)
        if self.table is not None:
            zero = np.zeros(N_CATEGORIES)
            return np.stack([self.table.get(_key(row), zero) for row in batch])
        return np.clip(nn_service.forward(self.net, batch), 0.0, 1.0)


class BCPolicy(BaseModel):
    """Reactive classifier over (observation, one-hot category) -> Forward / Left / Right"""

    net: Mlp

    class Config:
        arbitrary_types_allowed = True

    @property
    def obs_dim(self) -> int:
        return self.net.input_size - N_CATEGORIES

    def _inputs(self, obs: np.ndarray, category: Category) -> np.ndarray:
        batch = _batch(obs, self.obs_dim)
        onehot = np.zeros((batch.shape[0], N_CATEGORIES))
        onehot[:, int(category)] = 1.0
        return np.hstack([batch, onehot])

    def logits(self, obs: np.ndarray, category: Category) -> np.ndarray:
        return nn_service.forward(self.net, self._inputs(obs, category))

    def probabilities(self, obs: np.ndarray, category: Category) -> np.ndarray:
        logits = self.logits(obs, category)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def act(self, obs: np.ndarray, category: Category, rng: np.random.Generator) -> int:
        probs = self.probabilities(obs, category)[0]
        return int(rng.choice(N_MOVE_ACTIONS, p=probs))


ValueModel = Union[QFunction, TabularQFunction, ValueTable]


def value(model: ValueModel, obs: np.ndarray, category: Category) -> float:
    """Value of one observation for one category (max over actions for Q models)"""
    return float(model.values(obs)[0, int(category)])


def direction_values(model: ValueModel, views: np.ndarray) -> np.ndarray:
    """(12, 5) values of a panorama: one row per facing direction"""
    views = np.asarray(views, dtype=np.float64)
    if model.input_size == OBS_DIM:
        return model.values(views)
    if model.input_size == N_HEADINGS * OBS_DIM:
        rows = np.stack([sim_service.panoramic_vector(views, j) for j in range(N_HEADINGS)])
        return model.values(rows)
    raise ShapeMismatch(f"model input {model.input_size} fits neither single views nor panoramas")


# ---------------------------------------------------------------------------
# Exhaustive transitions on the pose graph
# ---------------------------------------------------------------------------

def exhaustive_quadruples(world: GridWorld, encoding: str = "observation") -> QuadrupleSet:
    """Every (node, action) transition of the pose graph with next-frame visibility rewards.

    ``encoding="node"`` replaces observations by the node id so aliased views stay distinct.
    """
    graph = pose_graph(world)
    nodes = np.repeat(np.arange(graph.n_nodes), N_MOVE_ACTIONS)
    actions = np.tile(np.arange(N_MOVE_ACTIONS), graph.n_nodes)
    successors = graph.successors[nodes, actions]
    if encoding == "node":
        obs, next_obs = nodes[:, None].astype(np.float64), successors[:, None].astype(np.float64)
    elif encoding == "observation":
        obs, next_obs = graph.observations[nodes], graph.observations[successors]
    else:
        raise InvalidParams(f"unknown encoding {encoding}")
    return QuadrupleSet(
        obs=obs,
        actions=actions,
        next_obs=next_obs,
        rewards=graph.visible[successors].astype(np.float64),
    )


# ---------------------------------------------------------------------------
# Q-learning
# ---------------------------------------------------------------------------

def _double_dqn_targets(online: Mlp, target: Mlp, next_obs: np.ndarray, rewards: np.ndarray, gamma: float) -> np.ndarray:
    n = next_obs.shape[0]
    q_online = nn_service.forward(online, next_obs).reshape(n, N_MOVE_ACTIONS, N_CATEGORIES)
    q_target = nn_service.forward(target, next_obs).reshape(n, N_MOVE_ACTIONS, N_CATEGORIES)
    best = np.argmax(q_online, axis=1)
    chosen = np.take_along_axis(q_target, best[:, None, :], axis=1)[:, 0, :]
    return bellman_target(rewards, chosen, gamma)


def bellman_residual(q: QFunction, quads: QuadrupleSet, gamma: float) -> float:
    """Mean over quadruples of the squared Bellman error summed over categories"""
    if len(quads) == 0:
        return 0.0
    targets = _double_dqn_targets(q.net, q.net, quads.next_obs, quads.rewards, gamma)
    pred = q.q_values(quads.obs)[np.arange(len(quads)), quads.actions]
    return float(np.mean(np.sum((pred - targets) ** 2, axis=1)))


def _check_quadruples(quads: QuadrupleSet, minimum: int) -> None:
    if len(quads) < minimum:
        raise InsufficientData(f"need at least {minimum} quadruples, got {len(quads)}")
    if not quads.labeled:
        raise InvalidParams("Q-learning needs an action label on every quadruple")


def train_q(
    quads: QuadrupleSet,
    cfg: Optional[QTrainConfig] = None,
    supervision: Optional[SupervisionSet] = None,
) -> Union[QFunction, TabularQFunction]:
    """Offline Q-learning over a static quadruple set (Double DQN, clipped targets)"""
    cfg = cfg or QTrainConfig()
    if cfg.tabular:
        if supervision is not None:
            raise InvalidParams("the joint supervision objective needs the network mode")
        _check_quadruples(quads, 1)
        return _train_q_tabular(quads, cfg)
    _check_quadruples(quads, cfg.batch_size)
    return _train_q_network(quads, cfg, supervision)


def _train_q_tabular(quads: QuadrupleSet, cfg: QTrainConfig) -> TabularQFunction:
    """Synchronous sweeps: every visited (state, action) moves toward its mean target, target table synced per sweep"""
    index: Dict[bytes, int] = {}
    rows: List[np.ndarray] = []

    def state_id(row: np.ndarray) -> int:
        key = _key(row)
        if key not in index:
            index[key] = len(rows)
            rows.append(row)
        return index[key]

    states = np.array([state_id(row) for row in quads.obs], dtype=np.int64)
    next_states = np.array([state_id(row) for row in quads.next_obs], dtype=np.int64)
    n_states = len(rows)
    pair = states * N_MOVE_ACTIONS + quads.actions
    counts = np.bincount(pair, minlength=n_states * N_MOVE_ACTIONS).astype(np.float64)
    visited = counts > 0

    q = np.zeros((n_states * N_MOVE_ACTIONS, N_CATEGORIES))
    curve = TrainingCurve()
    for sweep in range(1, cfg.tabular_max_sweeps + 1):
        q_next = q.reshape(n_states, N_MOVE_ACTIONS, N_CATEGORIES)[next_states].max(axis=1)
        targets = bellman_target(quads.rewards, q_next, cfg.gamma)
        sums = np.zeros_like(q)
        np.add.at(sums, pair, targets)
        mean_target = sums[visited] / counts[visited, None]
        delta = float(np.max(np.abs(mean_target - q[visited])))
        q[visited] += cfg.tabular_alpha * (mean_target - q[visited])
        curve.append(sweep, delta)
        if delta <= cfg.tabular_tolerance:
            break
    curve.final_loss = curve.residuals[-1] if curve.residuals else 0.0
    logger.info(f"Tabular Q over {n_states} states stopped after {len(curve.iterations)} sweeps (last change {curve.final_loss:.2e})")

    q = q.reshape(n_states, N_MOVE_ACTIONS, N_CATEGORIES)
    table = {_key(rows[i]): q[i].copy() for i in range(n_states)}
    return TabularQFunction(obs_dim=quads.obs_dim, table=table, training_log=curve)


def _train_q_network(quads: QuadrupleSet, cfg: QTrainConfig, supervision: Optional[SupervisionSet]) -> QFunction:
    rng = np.random.default_rng(cfg.seed)
    n = len(quads)
    order = rng.permutation(n)
    n_holdout = int(round(n * cfg.holdout_fraction))
    if n - n_holdout < cfg.batch_size:
        n_holdout = 0
    holdout = quads.subset(np.sort(order[:n_holdout]))
    train = quads.subset(np.sort(order[n_holdout:]))

    if supervision is not None and supervision.obs.shape[1] != quads.obs_dim:
        raise ShapeMismatch("supervision observations differ in size from the quadruples")

    net = nn_service.init_mlp((quads.obs_dim, *cfg.hidden_sizes, N_Q_OUTPUTS), rng)
    target = net.copy()
    state = AdamState(lr=cfg.learning_rate)
    curve = TrainingCurve()
    rows = np.arange(cfg.batch_size)
    loss = 0.0

    for iteration in range(1, cfg.iterations + 1):
        batch = rng.integers(0, len(train), size=cfg.batch_size)
        obs, actions = train.obs[batch], train.actions[batch]
        y = _double_dqn_targets(net, target, train.next_obs[batch], train.rewards[batch], cfg.gamma)
        out = nn_service.forward(net, obs).reshape(cfg.batch_size, N_MOVE_ACTIONS, N_CATEGORIES)
        diff = out[rows, actions] - y
        loss = float(np.mean(np.sum(diff ** 2, axis=1)))
        grad = np.zeros_like(out)
        grad[rows, actions] = 2.0 * diff / cfg.batch_size
        grads = nn_service.backward(net, obs, grad.reshape(cfg.batch_size, N_Q_OUTPUTS))

        if supervision is not None:
            sup = rng.integers(0, len(supervision), size=cfg.batch_size)
            pred = nn_service.forward(net, supervision.obs[sup])
            sup_diff = pred - supervision.targets[sup]
            loss += float(np.mean(np.sum(sup_diff ** 2, axis=1)))
            sup_grads = nn_service.backward(net, supervision.obs[sup], 2.0 * sup_diff / cfg.batch_size)
            grads = [g + h for g, h in zip(grads, sup_grads)]

        nn_service.adam_step(net, grads, state)

        if iteration % cfg.sync_period == 0:
            target = net.copy()
            residual = bellman_residual(QFunction(net=net), holdout, cfg.gamma) if len(holdout) else loss
            curve.append(iteration, residual)
            logger.info(f"Q iteration {iteration}/{cfg.iterations}: loss {loss:.5f}, held-out residual {residual:.5f}")

    curve.final_loss = loss
    if not net.is_finite():
        raise InvalidParams("Q-learning diverged to non-finite weights")
    return QFunction(net=net, training_log=curve)


# ---------------------------------------------------------------------------
# Policy evaluation baselines
# ---------------------------------------------------------------------------

def _state_ids(quads: QuadrupleSet) -> Tuple[List[np.ndarray], np.ndarray, np.ndarray]:
    index: Dict[bytes, int] = {}
    rows: List[np.ndarray] = []

    def state_id(row: np.ndarray) -> int:
        key = _key(row)
        if key not in index:
            index[key] = len(rows)
            rows.append(row)
        return index[key]

    states = np.array([state_id(row) for row in quads.obs], dtype=np.int64)
    next_states = np.array([state_id(row) for row in quads.next_obs], dtype=np.int64)
    return rows, states, next_states


def policy_evaluation_td0(quads: QuadrupleSet, cfg: Optional[ValueTrainConfig] = None) -> ValueTable:
    """TD(0) on consecutive pairs, action labels ignored.

    The tabular variant applies the expected update of every pair once per pass,
    V(o) += alpha * (mean_pairs clip(r + gamma V(o')) - V(o)).
    """
    cfg = cfg or ValueTrainConfig()
    if len(quads) == 0:
        raise InsufficientData("policy evaluation needs at least one frame pair")
    if not cfg.tabular:
        return _fit_value_net(quads, cfg, "td0", td_targets=True)

    rows, states, next_states = _state_ids(quads)
    n_states = len(rows)
    counts = np.bincount(states, minlength=n_states).astype(np.float64)
    visited = counts > 0
    v = np.zeros((n_states, N_CATEGORIES))
    for sweep in range(cfg.passes):
        targets = bellman_target(quads.rewards, v[next_states], cfg.gamma)
        sums = np.zeros_like(v)
        np.add.at(sums, states, targets)
        step = cfg.alpha * (sums[visited] / counts[visited, None] - v[visited])
        v[visited] += step
        if float(np.max(np.abs(step))) < 1e-14:
            break
    logger.info(f"TD(0) over {n_states} observations finished after {sweep + 1} passes")
    return ValueTable(kind="td0", obs_dim=quads.obs_dim, table={_key(rows[i]): v[i].copy() for i in range(n_states)})


def monte_carlo_returns(quads: QuadrupleSet, gamma: float) -> np.ndarray:
    """(N, 5) discounted return of each o_t: gamma**k where t+k is the pair carrying the first later reward"""
    if quads.traj_ids is None or quads.frame_idx is None:
        raise InvalidParams("Monte Carlo evaluation needs trajectory ids and frame indices")
    returns = np.zeros((len(quads), N_CATEGORIES))
    for traj in np.unique(quads.traj_ids):
        rows = np.flatnonzero(quads.traj_ids == traj)
        rows = rows[np.argsort(quads.frame_idx[rows], kind="stable")]
        next_reward = np.full(N_CATEGORIES, np.inf)
        for position in range(len(rows) - 1, -1, -1):
            row = rows[position]
            rewarded = quads.rewards[row] > 0
            next_reward[rewarded] = position
            k = next_reward - position
            returns[row] = np.where(np.isinf(k), 0.0, gamma ** np.where(np.isinf(k), 0.0, k))
    return returns


def policy_evaluation_mc(quads: QuadrupleSet, cfg: Optional[ValueTrainConfig] = None) -> ValueTable:
    """Every-visit Monte Carlo: each observation's value is the mean of its discounted returns"""
    cfg = cfg or ValueTrainConfig()
    if len(quads) == 0:
        raise InsufficientData("policy evaluation needs at least one frame pair")
    returns = monte_carlo_returns(quads, cfg.gamma)
    if not cfg.tabular:
        return _fit_value_net(quads, cfg, "mc", fixed_targets=returns)

    rows, states, _ = _state_ids(quads)
    sums = np.zeros((len(rows), N_CATEGORIES))
    np.add.at(sums, states, returns)
    counts = np.bincount(states, minlength=len(rows)).astype(np.float64)
    table = {_key(rows[i]): sums[i] / counts[i] for i in range(len(rows)) if counts[i] > 0}
    logger.info(f"Monte Carlo values for {len(table)} observations")
    return ValueTable(kind="mc", obs_dim=quads.obs_dim, table=table)


def _fit_value_net(
    quads: QuadrupleSet,
    cfg: ValueTrainConfig,
    kind: str,
    td_targets: bool = False,
    fixed_targets: Optional[np.ndarray] = None,
) -> ValueTable:
    """Scalar-per-category head trained on TD(0) bootstrap targets or on fixed regression targets"""
    rng = np.random.default_rng(cfg.seed)
    net = nn_service.init_mlp((quads.obs_dim, *cfg.hidden_sizes, N_CATEGORIES), rng)
    frozen = net.copy()
    state = AdamState(lr=cfg.learning_rate)
    batch_size = min(cfg.batch_size, len(quads))
    loss = 0.0
    for iteration in range(1, cfg.iterations + 1):
        batch = rng.integers(0, len(quads), size=batch_size)
        if td_targets:
            y = bellman_target(quads.rewards[batch], np.clip(nn_service.forward(frozen, quads.next_obs[batch]), 0.0, 1.0), cfg.gamma)
        else:
            y = fixed_targets[batch]
        pred = nn_service.forward(net, quads.obs[batch])
        loss, grad = nn_service.mse(pred, y)
        nn_service.adam_step(net, nn_service.backward(net, quads.obs[batch], grad), state)
        if td_targets and iteration % QLEARN_CONFIG["sync_period"] == 0:
            frozen = net.copy()
        if iteration % 5000 == 0:
            logger.info(f"{kind} value net iteration {iteration}/{cfg.iterations}: loss {loss:.5f}")
    return ValueTable(kind=kind, obs_dim=quads.obs_dim, net=net)


# ---------------------------------------------------------------------------
# Strong supervision
# ---------------------------------------------------------------------------

def oracle_q_targets(world: GridWorld, gamma: float) -> np.ndarray:
    """(n_nodes, 15) ground-truth Q: gamma**s of each action's successor node, 0 when unreachable"""
    graph = pose_graph(world)
    targets = np.zeros((graph.n_nodes, N_MOVE_ACTIONS, N_CATEGORIES))
    for category in Category:
        steps = oracle_steps(world, category)[graph.successors]
        with np.errstate(over="ignore"):
            targets[:, :, int(category)] = np.where(np.isinf(steps), 0.0, gamma ** np.where(np.isinf(steps), 0.0, steps))
    return targets.reshape(graph.n_nodes, N_Q_OUTPUTS)


def build_supervision(
    worlds: Sequence[GridWorld],
    gamma: float,
    n_samples: int = QLEARN_CONFIG["strong_samples"],
    seed: int = 0,
) -> SupervisionSet:
    """Random pose-graph nodes of the given worlds with their oracle Q targets"""
    if not worlds:
        raise InsufficientData("strong supervision needs at least one world")
    rng = np.random.default_rng([seed, 1])
    picks = rng.integers(0, len(worlds), size=n_samples)
    obs, targets = [], []
    for w in np.unique(picks):
        world = worlds[int(w)]
        graph = pose_graph(world)
        all_targets = oracle_q_targets(world, gamma)
        nodes = rng.integers(0, graph.n_nodes, size=int(np.sum(picks == w)))
        obs.append(graph.observations[nodes])
        targets.append(all_targets[nodes])
    return SupervisionSet(obs=np.vstack(obs), targets=np.vstack(targets))


def train_strong_supervision(
    worlds: Sequence[GridWorld],
    cfg: Optional[QTrainConfig] = None,
    n_samples: int = QLEARN_CONFIG["strong_samples"],
    supervision: Optional[SupervisionSet] = None,
) -> QFunction:
    """Regress all 15 Q outputs onto oracle targets sampled from the video worlds"""
    cfg = cfg or QTrainConfig()
    sup = supervision or build_supervision(worlds, cfg.gamma, n_samples, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = nn_service.init_mlp((sup.obs.shape[1], *cfg.hidden_sizes, N_Q_OUTPUTS), rng)
    state = AdamState(lr=cfg.learning_rate)
    batch_size = min(cfg.batch_size, len(sup))
    curve = TrainingCurve()
    loss = 0.0
    for iteration in range(1, cfg.iterations + 1):
        batch = rng.integers(0, len(sup), size=batch_size)
        pred = nn_service.forward(net, sup.obs[batch])
        diff = pred - sup.targets[batch]
        loss = float(np.mean(np.sum(diff ** 2, axis=1)))
        nn_service.adam_step(net, nn_service.backward(net, sup.obs[batch], 2.0 * diff / batch_size), state)
        if iteration % cfg.sync_period == 0:
            curve.append(iteration, loss)
            logger.info(f"Strong supervision iteration {iteration}/{cfg.iterations}: loss {loss:.5f}")
    curve.final_loss = loss
    return QFunction(net=net, training_log=curve)


# ---------------------------------------------------------------------------
# Behavior cloning
# ---------------------------------------------------------------------------

def bc_examples(quads: QuadrupleSet, suffix_length: int) -> Tuple[np.ndarray, np.ndarray]:
    """(obs + one-hot category, action) for every pair in a suffix of <= suffix_length pairs ending at a reward"""
    if quads.traj_ids is None or quads.frame_idx is None:
        raise InvalidParams("behavior cloning needs trajectory ids and frame indices")
    if not quads.labeled:
        raise InvalidParams("behavior cloning needs an action label on every pair")
    chosen = set()
    for traj in np.unique(quads.traj_ids):
        rows = np.flatnonzero(quads.traj_ids == traj)
        rows = rows[np.argsort(quads.frame_idx[rows], kind="stable")]
        for position, row in enumerate(rows):
            for c in np.flatnonzero(quads.rewards[row] > 0):
                for earlier in rows[max(0, position - suffix_length + 1):position + 1]:
                    chosen.add((int(earlier), int(c)))
    inputs, labels = [], []
    for row, c in sorted(chosen):
        onehot = np.zeros(N_CATEGORIES)
        onehot[c] = 1.0
        inputs.append(np.concatenate([quads.obs[row], onehot]))
        labels.append(quads.actions[row])
    if not inputs:
        return np.zeros((0, quads.obs_dim + N_CATEGORIES)), np.zeros(0, dtype=np.int64)
    return np.vstack(inputs), np.array(labels, dtype=np.int64)


def train_behavior_cloning(quads: QuadrupleSet, cfg: Optional[BCTrainConfig] = None) -> BCPolicy:
    cfg = cfg or BCTrainConfig()
    inputs, labels = bc_examples(quads, cfg.suffix_length)
    if len(labels) == 0:
        raise InsufficientData("no reward frames to clone behavior from")
    rng = np.random.default_rng(cfg.seed)
    net = nn_service.init_mlp((inputs.shape[1], *cfg.hidden_sizes, N_MOVE_ACTIONS), rng, zero_output=False)
    state = AdamState(lr=cfg.learning_rate)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labels))
        total, batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grad = nn_service.cross_entropy(nn_service.forward(net, inputs[batch]), labels[batch])
            nn_service.adam_step(net, nn_service.backward(net, inputs[batch], grad), state)
            total += loss
            batches += 1
        logger.info(f"BC epoch {epoch + 1}/{cfg.epochs}: loss {total / max(batches, 1):.4f} on {len(labels)} examples")
    return BCPolicy(net=net)


def bc_accuracy(policy: BCPolicy, quads: QuadrupleSet, suffix_length: int) -> float:
    inputs, labels = bc_examples(quads, suffix_length)
    if len(labels) == 0:
        return 0.0
    return float(np.mean(np.argmax(nn_service.forward(policy.net, inputs), axis=1) == labels))


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_value_model(model: Union[ValueModel, BCPolicy], path: str, kind: str, config_hash: str = "") -> None:
    """Networks use the VLVMODEL format; tables are written as VLVTABLE with one observation per line"""
    if isinstance(model, (QFunction, BCPolicy)):
        nn_service.save_mlp(model.net, path, kind, config_hash)
        return
    if isinstance(model, ValueTable) and model.net is not None:
        nn_service.save_mlp(model.net, path, kind, config_hash)
        return
    table = model.table
    lines = [header_line("VLVTABLE", kind, config_hash or "-", model.obs_dim)]
    for key, values in table.items():
        row = np.frombuffer(key, dtype=np.float64)
        lines.append(f"{format_floats(row)} | {format_floats(np.ravel(values))}")
    write_lines(path, lines)
    logger.info(f"Saved {kind} table with {len(table)} rows to {path}")


def _parse_table(lines: List[str]) -> Tuple[Union[TabularQFunction, ValueTable], str, str]:
    _, extra = parse_header(lines, "VLVTABLE")
    if len(extra) != 3:
        raise FormatError("table header needs <kind> <config_hash> <dim>", 1)
    kind, config_hash = extra[0], "" if extra[1] == "-" else extra[1]
    try:
        dim = int(extra[2])
    except ValueError:
        raise FormatError("dim must be an integer", 1)
    table = {}
    width = None
    for number, line in enumerate(lines[1:], start=2):
        if "|" not in line:
            raise FormatError("expected '<obs> | <values>'", number)
        left, right = line.split("|", 1)
        row = parse_floats(left.split(), number)
        values = parse_floats(right.split(), number)
        if row.size != dim:
            raise FormatError(f"observation has {row.size} values, expected {dim}", number)
        if width is None:
            width = values.size
        if values.size != width or width not in (N_CATEGORIES, N_Q_OUTPUTS):
            raise FormatError(f"unexpected value count {values.size}", number)
        table[_key(row)] = values
    if width == N_Q_OUTPUTS:
        q_table = {k: v.reshape(N_MOVE_ACTIONS, N_CATEGORIES) for k, v in table.items()}
        return TabularQFunction(obs_dim=dim, table=q_table), kind, config_hash
    return ValueTable(kind=kind, obs_dim=dim, table=table), kind, config_hash


def load_value_model(path: str) -> Tuple[Union[ValueModel, BCPolicy], str, str]:
    """Returns (model, kind, config hash); the kind recorded at save time picks the model type"""
    lines = read_lines(path)
    if lines and lines[0].startswith("VLVTABLE"):
        return _parse_table(lines)
    net, kind, config_hash = nn_service.parse_mlp(lines)
    if kind == "bc":
        return BCPolicy(net=net), kind, config_hash
    if kind in ("td0", "mc"):
        if net.output_size != N_CATEGORIES:
            raise InvalidParams(f"{path} does not hold a value network")
        return ValueTable(kind=kind, obs_dim=net.input_size, net=net), kind, config_hash
    if net.output_size != N_Q_OUTPUTS:
        raise InvalidParams(f"{path} holds a {net.output_size}-output network, expected {N_Q_OUTPUTS}")
    return QFunction(net=net), kind, config_hash
