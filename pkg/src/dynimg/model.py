"""Small CNN classifier over dynamic images, written against numpy.

Layer stack::

    conv3x3(C->8) relu maxpool2 conv3x3(8->16) relu maxpool2
    flatten dense(->64) relu dropout dense(->2) softmax

Convolutions use zero "same" padding. Training uses Adam, an exponential
learning rate schedule ``lr0 * exp(k * t)``, inverted dropout and early
stopping on validation loss.

Example::

    from dynimg.model import train, predict_proba

    params, trace = train(train_set, val_set, TrainConfig())
    probs = predict_proba(params, test_set.images)
"""
import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson
from numpy.lib.stride_tricks import sliding_window_view

from dynimg.models import (
    AdamState,
    EpochRecord,
    ImageSet,
    ModelParams,
    TrainConfig,
    TrainTrace,
)
from dynimg.models.training import LAYERS, NUM_CLASSES, TENSORS, tensor_shapes

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"DNWT"
WEIGHTS_VERSION = 1
LOG_CLAMP = 1e-12


class ModelError(Exception):
    """Exception for shape, state or numeric failures of the classifier."""

    pass


def init_params(
    input_shape: tuple[int, int, int], seed: int = 0, dropout_p: float = 0.5
) -> ModelParams:
    """Return seed-deterministic initial weights.

    Layers feeding a ReLU use He-uniform initialization, the output layer
    Glorot-uniform; biases start at zero.

    Raises:
        ModelError: input shape too small
    """
    try:
        shapes = tensor_shapes(tuple(input_shape))  # type: ignore[arg-type]
    except ValueError as exc:
        raise ModelError(str(exc))
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name in TENSORS:
        shape = shapes[name]
        if name.endswith("_b"):
            weights[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        if name == "dense2_w":
            limit = math.sqrt(6.0 / (fan_in + shape[-1]))
        else:
            limit = math.sqrt(6.0 / fan_in)
        weights[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(
        input_shape=input_shape, weights=weights, dropout_p=dropout_p, seed=seed
    )


def lr_schedule(lr0: float, k: float, t: int) -> float:
    """Return the learning rate ``lr0 * exp(k * t)``.

    Raises:
        ModelError: lr0 is not positive
    """
    if not lr0 > 0:
        raise ModelError(f"lr0 must be > 0, got {lr0}")
    return lr0 * math.exp(k * t)


@dataclass
class ForwardCache:
    """Activations of a train-mode forward pass, consumed by ``backward``."""

    weights: dict[str, np.ndarray]
    mode: str
    values: dict[str, Any] = field(default_factory=dict)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple:
    n, height, width, channels = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    # windows[n, y, x, c, i, j] = padded[n, y + i, x + j, c]
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = windows.reshape(n * height * width, channels * 9)
    wm = w.transpose(2, 0, 1, 3).reshape(channels * 9, w.shape[3])
    out = (cols @ wm + b).reshape(n, height, width, w.shape[3])
    return out, cols


def _conv_backward(
    dout: np.ndarray, cols: np.ndarray, x_shape: tuple, w: np.ndarray, need_dx: bool
) -> tuple:
    n, height, width, channels = x_shape
    filters = w.shape[3]
    d2 = dout.reshape(-1, filters)
    dw = (cols.T @ d2).reshape(channels, 3, 3, filters).transpose(1, 2, 0, 3)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    wm = w.transpose(2, 0, 1, 3).reshape(channels * 9, filters)
    dcols = (d2 @ wm.T).reshape(n, height, width, channels, 3, 3)
    dpad = np.zeros((n, height + 2, width + 2, channels))
    for i in range(3):
        for j in range(3):
            dpad[:, i : i + height, j : j + width, :] += dcols[..., i, j]
    return dpad[:, 1:-1, 1:-1, :], dw, db


def _pool_forward(x: np.ndarray) -> tuple:
    n, height, width, channels = x.shape
    h2, w2 = height // 2, width // 2
    blocks = (
        x[:, : 2 * h2, : 2 * w2, :]
        .reshape(n, h2, 2, w2, 2, channels)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h2, w2, channels, 4)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., np.newaxis], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: tuple) -> np.ndarray:
    n, height, width, channels = x_shape
    h2, w2 = height // 2, width // 2
    dblocks = np.zeros((n, h2, w2, channels, 4))
    np.put_along_axis(dblocks, arg[..., np.newaxis], dout[..., np.newaxis], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, : 2 * h2, : 2 * w2, :] = (
        dblocks.reshape(n, h2, w2, channels, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, 2 * h2, 2 * w2, channels)
    )
    return dx


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward(
    params: ModelParams,
    batch: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the network on a batch of images.

    Args:
        params: weights
        batch: images ``(N, H, W, C)`` matching ``params.input_shape``
        mode: ``"train"`` applies inverted dropout and returns a cache,
            ``"infer"`` does neither
        rng: dropout mask source, required in train mode when dropout is on

    Returns:
        Class probabilities ``(N, 2)`` and the cache (None in infer mode)

    Raises:
        ModelError: shape mismatch, unknown mode or missing rng
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != params.input_shape:
        raise ModelError(
            f"Batch shape {batch.shape} does not match model input "
            f"(N, {', '.join(map(str, params.input_shape))})"
        )
    if mode not in ("train", "infer"):
        raise ModelError(f"Unknown mode {mode!r}")
    w = params.weights

    pre1, cols1 = _conv_forward(batch, w["conv1_w"], w["conv1_b"])
    act1 = np.maximum(pre1, 0.0)
    pool1, arg1 = _pool_forward(act1)
    pre2, cols2 = _conv_forward(pool1, w["conv2_w"], w["conv2_b"])
    act2 = np.maximum(pre2, 0.0)
    pool2, arg2 = _pool_forward(act2)
    flat = pool2.reshape(pool2.shape[0], -1)
    pre3 = flat @ w["dense1_w"] + w["dense1_b"]
    act3 = np.maximum(pre3, 0.0)

    mask = None
    if mode == "train" and params.dropout_p > 0:
        if rng is None:
            raise ModelError("Train mode with dropout needs an rng")
        keep = rng.random(act3.shape) >= params.dropout_p
        mask = keep / (1.0 - params.dropout_p)
        dropped = act3 * mask
    else:
        dropped = act3
    logits = dropped @ w["dense2_w"] + w["dense2_b"]
    probs = _softmax(logits)

    if mode == "infer":
        return probs, None
    cache = ForwardCache(
        weights=params.weights,
        mode=mode,
        values=dict(
            x_shape=batch.shape,
            cols1=cols1,
            pre1=pre1,
            arg1=arg1,
            pool1_shape=pool1.shape,
            cols2=cols2,
            pre2=pre2,
            arg2=arg2,
            pool2_shape=pool2.shape,
            flat=flat,
            pre3=pre3,
            mask=mask,
            dropped=dropped,
            probs=probs,
        ),
    )
    return probs, cache


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Return the mean negative log-likelihood of the true classes.

    Probabilities are clamped at 1e-12 before the log.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def backward(
    params: ModelParams, cache: ForwardCache | None, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Backpropagate the loss of a train-mode forward pass.

    Returns:
        Gradient per weight tensor, shaped like the tensor

    Raises:
        ModelError: missing cache, cache of another mode or of other weights,
            or labels that do not match the batch
    """
    if cache is None or cache.mode != "train":
        raise ModelError("backward needs the cache of a train-mode forward pass")
    if cache.weights is not params.weights:
        raise ModelError("Stale cache: weights changed since the forward pass")
    v = cache.values
    labels = np.asarray(labels, dtype=np.int64)
    n = v["x_shape"][0]
    if labels.shape != (n,):
        raise ModelError(f"Got {labels.shape[0]} labels for a batch of {n}")
    w = params.weights

    onehot = np.zeros((n, NUM_CLASSES))
    onehot[np.arange(n), labels] = 1.0
    dlogits = (v["probs"] - onehot) / n

    grads: dict[str, np.ndarray] = {}
    grads["dense2_w"] = v["dropped"].T @ dlogits
    grads["dense2_b"] = dlogits.sum(axis=0)
    ddropped = dlogits @ w["dense2_w"].T
    dact3 = ddropped * v["mask"] if v["mask"] is not None else ddropped
    dpre3 = dact3 * (v["pre3"] > 0)
    grads["dense1_w"] = v["flat"].T @ dpre3
    grads["dense1_b"] = dpre3.sum(axis=0)
    dpool2 = (dpre3 @ w["dense1_w"].T).reshape(v["pool2_shape"])
    dact2 = _pool_backward(dpool2, v["arg2"], v["pre2"].shape)
    dpre2 = dact2 * (v["pre2"] > 0)
    dpool1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(
        dpre2, v["cols2"], v["pool1_shape"], w["conv2_w"], need_dx=True
    )
    dact1 = _pool_backward(dpool1, v["arg1"], v["pre1"].shape)
    dpre1 = dact1 * (v["pre1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        dpre1, v["cols1"], v["x_shape"], w["conv1_w"], need_dx=False
    )
    return grads


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[ModelParams, AdamState]:
    """Apply one bias-corrected Adam update.

    Returns:
        New weights and new optimizer state; the inputs are left untouched

    Raises:
        ModelError: a gradient tensor holds NaN or infinity
    """
    for name in TENSORS:
        if not np.all(np.isfinite(grads[name])):
            raise ModelError(f"Non-finite gradient in tensor {name!r}")
    step = state.step + 1
    m, v, weights = {}, {}, {}
    for name in TENSORS:
        g = grads[name]
        m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m[name] / (1.0 - state.beta1**step)
        v_hat = v[name] / (1.0 - state.beta2**step)
        weights[name] = params.weights[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = ModelParams(
        input_shape=params.input_shape,
        weights=weights,
        dropout_p=params.dropout_p,
        seed=params.seed,
    )
    new_state = AdamState(
        m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_params, new_state


def predict_proba(
    params: ModelParams, images: np.ndarray, batch_size: int = 32
) -> np.ndarray:
    """Return infer-mode class probabilities ``(N, 2)``.

    Raises:
        ModelError: images do not match the model input
    """
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        return np.zeros((0, NUM_CLASSES))
    chunks = [
        forward(params, images[start : start + batch_size])[0]
        for start in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(chunks)


def train(
    train_set: ImageSet, val_set: ImageSet, cfg: TrainConfig
) -> tuple[ModelParams, TrainTrace]:
    """Fit a freshly initialized classifier.

    Each epoch shuffles the training set into mini-batches (the last partial
    batch is kept), then measures validation loss. Training stops once the
    validation loss has not improved for more than ``cfg.patience`` epochs,
    or after ``cfg.max_epochs``.

    Returns:
        Weights of the best validation epoch and the per-epoch trace

    Raises:
        ModelError: empty set or input shape mismatch
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ModelError(
            f"Training needs non-empty train and validation sets, "
            f"got {len(train_set)} and {len(val_set)}"
        )
    if train_set.input_shape != val_set.input_shape:
        raise ModelError(
            f"Train images {train_set.input_shape} and validation images "
            f"{val_set.input_shape} differ in shape"
        )
    rng = np.random.default_rng(cfg.seed)
    params = init_params(train_set.input_shape, seed=cfg.seed, dropout_p=cfg.dropout_p)
    state = AdamState.zeros_like(params)
    trace = TrainTrace()
    best_params, best_loss, wait, step = params, math.inf, 0, 0

    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        first_step = step
        order = rng.permutation(len(train_set))
        total_loss, correct = 0.0, 0
        for start in range(0, len(train_set), cfg.batch_size):
            batch = train_set.take(order[start : start + cfg.batch_size])
            t = epoch if cfg.schedule == "epoch" else step
            probs, cache = forward(params, batch.images, "train", rng)
            total_loss += loss(probs, batch.labels) * len(batch)
            correct += int((probs.argmax(axis=1) == batch.labels).sum())
            grads = backward(params, cache, batch.labels)
            params, state = adam_step(
                params, grads, state, lr_schedule(cfg.lr0, cfg.k, t)
            )
            step += 1

        val_probs = predict_proba(params, val_set.images)
        val_loss = loss(val_probs, val_set.labels)
        record = EpochRecord(
            epoch=epoch,
            lr=lr_schedule(
                cfg.lr0, cfg.k, epoch if cfg.schedule == "epoch" else first_step
            ),
            train_loss=total_loss / len(train_set),
            val_loss=val_loss,
            train_acc=correct / len(train_set),
            val_acc=float((val_probs.argmax(axis=1) == val_set.labels).mean()),
            wall_time=time.perf_counter() - started,
        )
        trace.epochs.append(record)
        trace.stopping_epoch = epoch
        logger.info(
            "epoch %d lr=%.3g loss=%.4f val_loss=%.4f acc=%.3f val_acc=%.3f",
            epoch,
            record.lr,
            record.train_loss,
            record.val_loss,
            record.train_acc,
            record.val_acc,
        )
        if not math.isfinite(val_loss):
            raise ModelError(f"Validation loss became non-finite at epoch {epoch}")
        if val_loss < best_loss:
            best_params, best_loss, wait = params, val_loss, 0
            trace.best_epoch = epoch
        else:
            wait += 1
            if wait > cfg.patience:
                logger.info("Early stopping at epoch %d", epoch)
                break

    return best_params, trace


def save_weights(params: ModelParams, path: Path) -> None:
    """Write ``params`` to a ``.dnw`` file.

    Layout: magic ``DNWT``, little-endian uint16 version, uint32 header
    length, a JSON header (input shape, dropout, layer list, tensor
    manifest), then every tensor as little-endian float32 in declaration
    order.
    """
    header = orjson.dumps(
        {
            "input_shape": list(params.input_shape),
            "dropout_p": params.dropout_p,
            "seed": params.seed,
            "layers": list(LAYERS),
            "tensors": params.manifest(),
        },
        option=orjson.OPT_SORT_KEYS,
    )
    chunks = [WEIGHTS_MAGIC, struct.pack("<HI", WEIGHTS_VERSION, len(header)), header]
    chunks += [params.weights[name].astype("<f4").tobytes() for name in TENSORS]
    path.write_bytes(b"".join(chunks))


def load_weights(path: Path) -> ModelParams:
    """Read a ``.dnw`` file.

    Raises:
        ModelError: wrong magic or version, bad header, truncated tensors
    """
    data = path.read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise ModelError(f"{path} is not a weights file")
    try:
        version, header_len = struct.unpack_from("<HI", data, 4)
    except struct.error:
        raise ModelError(f"{path}: truncated header")
    if version != WEIGHTS_VERSION:
        raise ModelError(f"{path}: unsupported weights version {version}")
    offset = 10
    try:
        header = orjson.loads(data[offset : offset + header_len])
        input_shape = tuple(int(v) for v in header["input_shape"])
        tensors = header["tensors"]
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: invalid header: {exc}")
    offset += header_len

    weights: dict[str, np.ndarray] = {}
    for entry in tensors:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        raw = data[offset : offset + 4 * count]
        if len(raw) < 4 * count:
            raise ModelError(f"{path}: truncated tensor {entry['name']!r}")
        weights[entry["name"]] = (
            np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        )
        offset += 4 * count
    try:
        return ModelParams(
            input_shape=input_shape,  # type: ignore[arg-type]
            weights=weights,
            dropout_p=float(header.get("dropout_p", 0.0)),
            seed=int(header.get("seed", 0)),
        )
    except ValueError as exc:
        raise ModelError(f"{path}: {exc}")


def write_trace_csv(trace: TrainTrace, path: Path) -> None:
    """Write the trace as CSV, one row per epoch.

    Columns: epoch, lr, train_loss, val_loss, train_acc, val_acc.
    """
    columns = ["epoch", "lr", "train_loss", "val_loss", "train_acc", "val_acc"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for record in trace.epochs:
            writer.writerow([repr(getattr(record, column)) for column in columns])
