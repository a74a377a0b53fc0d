"""Dense networks with hand-written backpropagation and Adam"""
import logging
from typing import List, Sequence, Tuple

import numpy as np

from app.exceptions import ShapeMismatch, FormatError, InvalidParams
from app.models.network_model import Mlp, AdamState
from app.services.artifact_service import (
    format_floats,
    header_line,
    parse_floats,
    parse_header,
    read_lines,
    write_lines,
)

logger = logging.getLogger(__name__)


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, zero_output: bool = True) -> Mlp:
    """He-initialized weights, zero biases; a zero output layer makes an untrained net predict exactly 0"""
    sizes = tuple(int(s) for s in sizes)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        if last and zero_output:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return Mlp(sizes=sizes, weights=weights, biases=biases)


def _as_batch(mlp: Mlp, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != mlp.input_size:
        raise ShapeMismatch(f"input has shape {x.shape}, network expects {mlp.input_size} features")
    return batch, single


def forward_cache(mlp: Mlp, x: np.ndarray) -> List[np.ndarray]:
    """Activations of every layer, input first, output last (batched)"""
    batch, _ = _as_batch(mlp, x)
    activations = [batch]
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = activations[-1] @ w + b
        if i < mlp.n_layers - 1:
            z = np.maximum(z, 0.0)
        activations.append(z)
    return activations


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    batch, single = _as_batch(mlp, x)
    out = forward_cache(mlp, batch)[-1]
    return out[0] if single else out


def backward(mlp: Mlp, x: np.ndarray, loss_grad: np.ndarray) -> List[np.ndarray]:
    """Gradients [dW0, db0, dW1, db1, ...] given dLoss/dOutput; batch rows are summed"""
    activations = forward_cache(mlp, x)
    grad = np.asarray(loss_grad, dtype=np.float64)
    if grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != activations[-1].shape:
        raise ShapeMismatch(f"loss gradient has shape {np.shape(loss_grad)}, output is {activations[-1].shape}")
    grads: List[np.ndarray] = [None] * (2 * mlp.n_layers)
    for i in reversed(range(mlp.n_layers)):
        grads[2 * i] = activations[i].T @ grad
        grads[2 * i + 1] = grad.sum(axis=0)
        if i > 0:
            grad = (grad @ mlp.weights[i].T) * (activations[i] > 0)
    return grads


def adam_step(mlp: Mlp, grads: List[np.ndarray], state: AdamState) -> None:
    """In-place Adam update with bias correction"""
    params = mlp.parameters()
    if len(grads) != len(params):
        raise ShapeMismatch(f"{len(grads)} gradients for {len(params)} parameter tensors")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient"""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def cross_entropy(logits: np.ndarray, classes) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood of integer classes under softmax(logits), with gradient"""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    batch = logits[None, :] if single else logits
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if classes.shape[0] != batch.shape[0]:
        raise ShapeMismatch(f"{classes.shape[0]} labels for {batch.shape[0]} rows")
    shifted = batch - batch.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch.shape[0])
    loss = float(-log_probs[rows, classes].mean())
    grad = np.exp(log_probs)
    grad[rows, classes] -= 1.0
    grad /= batch.shape[0]
    return loss, grad[0] if single else grad


def argmax_lowest(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax; np.argmax already returns the first (lowest index) maximum"""
    return np.argmax(np.asarray(values), axis=-1)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def mlp_lines(mlp: Mlp, kind: str, config_hash: str = "") -> List[str]:
    lines = [header_line("VLVMODEL", kind, config_hash), " ".join(str(s) for s in mlp.sizes)]
    for tensor in mlp.parameters():
        lines.append(format_floats(tensor.ravel()))
    return lines


def save_mlp(mlp: Mlp, path: str, kind: str, config_hash: str = "") -> None:
    if not kind or " " in kind:
        raise InvalidParams("model kind must be a single token")
    write_lines(path, mlp_lines(mlp, kind, config_hash))
    logger.info(f"Saved {kind} model {mlp.sizes} to {path}")


def parse_mlp(lines: List[str]) -> Tuple[Mlp, str, str]:
    _, extra = parse_header(lines, "VLVMODEL")
    if not extra:
        raise FormatError("model header lacks a kind", 1)
    kind = extra[0]
    config_hash = extra[1] if len(extra) > 1 else ""
    if len(lines) < 2:
        raise FormatError("missing layer-size line", 2)
    try:
        sizes = tuple(int(v) for v in lines[1].split())
    except ValueError:
        raise FormatError("layer sizes must be integers", 2)
    if len(sizes) < 2:
        raise FormatError("need at least two layer sizes", 2)
    expected = 2 * (len(sizes) - 1)
    if len(lines) < 2 + expected:
        raise FormatError(f"expected {expected} parameter lines", len(lines) + 1)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        w_line, b_line = 3 + 2 * i, 4 + 2 * i
        w = parse_floats(lines[w_line - 1].split(), w_line)
        b = parse_floats(lines[b_line - 1].split(), b_line)
        if w.size != sizes[i] * sizes[i + 1]:
            raise FormatError(f"weight tensor {i} has {w.size} values, expected {sizes[i] * sizes[i + 1]}", w_line)
        if b.size != sizes[i + 1]:
            raise FormatError(f"bias tensor {i} has {b.size} values, expected {sizes[i + 1]}", b_line)
        weights.append(w.reshape(sizes[i], sizes[i + 1]))
        biases.append(b)
    return Mlp(sizes=sizes, weights=weights, biases=biases), kind, config_hash


def load_mlp(path: str) -> Tuple[Mlp, str, str]:
    """Returns (network, kind, config hash)"""
    return parse_mlp(read_lines(path))
