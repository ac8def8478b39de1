"""Training loop for the distance probe.

The probe is a single d2 x d1 matrix B. For a sentence of n words with
tree distances Delta and induced distances d_ij = d(h_i, h_j), the
per-sentence loss is

    (1/n^2) sum_{i<j} |Delta_ij - d_ij|

and the training objective is its mean over sentences plus an optional
regularizer on A = B^T B, weighted by lambda. Optimization is minibatch
SGD (an adaptive-moment variant sits behind a config switch) with the
learning rate halved whenever the dev loss fails to improve; the B
snapshot with the best dev loss is what training returns.

Reported losses: each train_loss_per_epoch entry is the full objective
(mean sentence loss plus the regularizer term) at that epoch's final B;
dev_loss_per_epoch entries are the plain mean sentence loss. Index 0 in
both lists is the pre-training evaluation of the initial B.
"""

from __future__ import annotations

import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import (
    ClampCounter,
    KernelSpec,
    pairwise_distances,
    weighted_distance_gradient,
)

REGULARIZERS = ("none", "frobenius", "trace")
OPTIMIZERS = ("sgd", "adaptive")

WEIGHTS_MAGIC = b"KPRB"
WEIGHTS_VERSION = 1


class DivergenceError(ArithmeticError):
    """Training loss left the realm of finite numbers."""


class WeightsError(ValueError):
    """Malformed probe weights file or config sidecar."""


@dataclass(frozen=True)
class ProbeConfig:
    """Everything train() needs besides the data itself."""

    kernel: KernelSpec = KernelSpec()
    d2: int = 128
    regularizer: str = "none"
    lam: float = 0.0
    learning_rate: float = 0.2
    max_epochs: int = 100
    batch_size: int = 16
    patience: int = 8
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self) -> None:
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.d2 < 1:
            raise ValueError("d2 must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")

    def to_json(self) -> str:
        doc = {
            "kernel": json.loads(self.kernel.to_json()),
            "d2": self.d2,
            "regularizer": self.regularizer,
            "lambda": self.lam,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "seed": self.seed,
            "optimizer": self.optimizer,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json_obj(cls, doc: dict) -> "ProbeConfig":
        known = {
            "kernel", "d2", "regularizer", "lambda", "learning_rate",
            "max_epochs", "batch_size", "patience", "seed", "optimizer",
        }
        bad = set(doc) - known
        if bad:
            raise ValueError(f"unknown probe config fields {sorted(bad)}")
        kwargs = {k: v for k, v in doc.items() if k not in ("kernel", "lambda")}
        if "lambda" in doc:
            kwargs["lam"] = doc["lambda"]
        if "kernel" in doc:
            kernel = doc["kernel"]
            if isinstance(kernel, str):
                kernel = {"kind": kernel}
            kwargs["kernel"] = KernelSpec.from_json_obj(kernel)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ProbeConfig":
        return cls.from_json_obj(json.loads(text))


# key=value config keys that belong to the kernel, not the probe
_KERNEL_KEYS = {"c", "degree", "a", "b", "sigma2"}
_INT_KEYS = {"d2", "degree", "max_epochs", "batch_size", "patience", "seed"}
_STR_KEYS = {"kernel", "regularizer", "optimizer"}


def parse_config(text: str) -> ProbeConfig:
    """Parse a probe config from JSON or from key=value lines.

    The key=value form is flat: `kernel=rbf` picks the kind and the
    kernel hyperparameters c, degree, a, b, sigma2 sit next to the probe
    keys. Blank lines and #-comments are skipped.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return ProbeConfig.from_json(text)
    doc: dict = {}
    kernel: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_KEYS:
            parsed: object = int(value)
        elif key in _STR_KEYS:
            parsed = value
        else:
            parsed = float(value)
        if key == "kernel":
            kernel["kind"] = parsed
        elif key in _KERNEL_KEYS:
            kernel[key] = parsed
        else:
            doc[key] = parsed
    if kernel:
        doc["kernel"] = kernel
    return ProbeConfig.from_json_obj(doc)


def load_config(path: str) -> ProbeConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


@dataclass
class TrainReport:
    """What happened during one training run."""

    epochs_run: int
    train_loss_per_epoch: list
    dev_loss_per_epoch: list
    best_epoch: int
    clamp_count: int
    wall_time: float

    def to_json_obj(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "train_loss_per_epoch": self.train_loss_per_epoch,
            "dev_loss_per_epoch": self.dev_loss_per_epoch,
            "best_epoch": self.best_epoch,
            "clamp_count": self.clamp_count,
            "wall_time": self.wall_time,
        }


def _check_pair(H: np.ndarray, delta: np.ndarray) -> int:
    n = H.shape[0]
    if delta.shape != (n, n):
        raise ValueError(
            f"distance matrix {delta.shape} does not match {n} embedding rows"
        )
    return n


def sentence_loss(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    delta: np.ndarray,
    counter: ClampCounter | None = None,
) -> float:
    """L1 distance-matching loss, normalized by n^2 over the i<j pairs."""
    n = _check_pair(H, delta)
    if n < 2:
        return 0.0
    dist = pairwise_distances(spec, B, H, counter=counter)
    iu = np.triu_indices(n, k=1)
    gap = np.asarray(delta, dtype=np.float64)[iu] - dist[iu]
    return float(np.abs(gap).sum() / (n * n))


def loss_gradient(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    delta: np.ndarray,
    counter: ClampCounter | None = None,
) -> np.ndarray:
    """Subgradient of sentence_loss with respect to B.

    Pairs sitting exactly on the hinge (d = Delta) or at zero distance
    contribute nothing, so B = 0 yields a zero gradient.
    """
    n = _check_pair(H, delta)
    if n < 2:
        return np.zeros_like(B, dtype=np.float64)
    dist = pairwise_distances(spec, B, H, counter=counter)
    W = -np.sign(np.asarray(delta, dtype=np.float64) - dist) / (n * n)
    W[dist == 0.0] = 0.0
    np.fill_diagonal(W, 0.0)
    return weighted_distance_gradient(spec, B, H, W, dist=dist)


def regularizer(kind: str, B: np.ndarray) -> tuple:
    """Value and gradient of the penalty on A = B^T B.

    trace:     tr(A)     = ||B||_F^2,      gradient 2 B
    frobenius: tr(A^T A) = ||B^T B||_F^2,  gradient 4 B (B^T B)
    """
    if kind == "trace":
        return float(np.sum(B * B)), 2.0 * B
    if kind == "frobenius":
        A = B.T @ B
        return float(np.sum(A * A)), 4.0 * (B @ A)
    raise ValueError(f"no such regularizer {kind!r}")


def _dataset_loss(
    spec: KernelSpec,
    B: np.ndarray,
    data: list,
    counter: ClampCounter | None = None,
) -> float:
    total = 0.0
    for H, delta in data:
        total += sentence_loss(spec, B, H, delta, counter=counter)
    return total / len(data)


def train(
    config: ProbeConfig,
    train_data: list,
    dev_data: list,
    workers: int = 1,
) -> tuple:
    """Fit B on (H, Delta) pairs; returns (B, TrainReport).

    Deterministic given the config seed: initialization, shuffling, and
    the update order are all driven by one generator, and per-sentence
    gradients are summed in batch order even when computed on a thread
    pool (workers > 1).
    """
    if not train_data or not dev_data:
        raise ValueError("train and dev sets must both be nonempty")
    d1 = train_data[0][0].shape[1]
    for H, delta in list(train_data) + list(dev_data):
        if H.shape[1] != d1:
            raise ValueError(
                f"embedding width {H.shape[1]} != {d1} of the first sentence"
            )
        _check_pair(H, delta)

    spec = config.kernel.resolve(config.d2)
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / np.sqrt(d1)
    B = rng.uniform(-scale, scale, size=(config.d2, d1))
    counter = ClampCounter()
    started = time.perf_counter()

    use_reg = config.regularizer != "none" and config.lam > 0.0

    def objective(M: np.ndarray) -> float:
        value = _dataset_loss(spec, M, train_data, counter=counter)
        if use_reg:
            value += config.lam * regularizer(config.regularizer, M)[0]
        return value

    train_losses = [objective(B)]
    dev_losses = [_dataset_loss(spec, B, dev_data, counter=counter)]
    best_dev = dev_losses[0]
    best_B = B.copy()
    best_epoch = 0
    lr = config.learning_rate
    bad_streak = 0
    epochs_run = 0

    # adaptive-moment state, unused for plain sgd
    m1 = np.zeros_like(B)
    m2 = np.zeros_like(B)
    steps = 0

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(train_data))
            for lo in range(0, len(order), config.batch_size):
                batch = [train_data[k] for k in order[lo:lo + config.batch_size]]

                def one(pair: tuple) -> np.ndarray:
                    H, delta = pair
                    return loss_gradient(spec, B, H, delta, counter=counter)

                grads = list(pool.map(one, batch)) if pool else [one(p) for p in batch]
                G = sum(grads) / len(batch)
                if use_reg:
                    G = G + config.lam * regularizer(config.regularizer, B)[1]
                steps += 1
                if config.optimizer == "adaptive":
                    m1 = 0.9 * m1 + 0.1 * G
                    m2 = 0.999 * m2 + 0.001 * (G * G)
                    mhat = m1 / (1.0 - 0.9 ** steps)
                    vhat = m2 / (1.0 - 0.999 ** steps)
                    B = B - lr * mhat / (np.sqrt(vhat) + 1e-8)
                else:
                    B = B - lr * G

            epochs_run = epoch
            train_losses.append(objective(B))
            dev_losses.append(_dataset_loss(spec, B, dev_data, counter=counter))
            if not (np.isfinite(train_losses[-1]) and np.isfinite(dev_losses[-1])):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} (learning rate {lr:g})"
                )
            if dev_losses[-1] < best_dev:
                best_dev = dev_losses[-1]
                best_B = B.copy()
                best_epoch = epoch
                bad_streak = 0
            else:
                bad_streak += 1
                lr *= 0.5
                if bad_streak >= config.patience:
                    break
    finally:
        if pool:
            pool.shutdown()

    report = TrainReport(
        epochs_run=epochs_run,
        train_loss_per_epoch=train_losses,
        dev_loss_per_epoch=dev_losses,
        best_epoch=best_epoch,
        clamp_count=counter.count,
        wall_time=time.perf_counter() - started,
    )
    return best_B, report


def save_weights(path: str, B: np.ndarray, config: ProbeConfig) -> None:
    """Write B as KPRB binary plus a <path>.json config sidecar."""
    B = np.ascontiguousarray(B, dtype="<f4")
    d2, d1 = B.shape
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", WEIGHTS_VERSION, d2, d1))
        fh.write(B.tobytes(order="C"))
    with open(path + ".json", "w", encoding="utf-8") as fh:
        fh.write(config.to_json())
        fh.write("\n")


def load_weights(path: str) -> tuple:
    """Read back (B, ProbeConfig) written by save_weights."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise WeightsError(f"bad magic {blob[:4]!r} at byte 0, want KPRB")
    if len(blob) < 16:
        raise WeightsError("weights file truncated before header end")
    version, d2, d1 = struct.unpack_from("<III", blob, 4)
    if version != WEIGHTS_VERSION:
        raise WeightsError(f"unsupported weights version {version}")
    want = 16 + 4 * d2 * d1
    if len(blob) != want:
        raise WeightsError(f"weights payload is {len(blob)} bytes, want {want}")
    B = np.frombuffer(blob, dtype="<f4", offset=16).reshape(d2, d1).copy()
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            config = ProbeConfig.from_json(fh.read())
    except FileNotFoundError as exc:
        raise WeightsError(f"missing config sidecar {path}.json") from exc
    if config.d2 != d2:
        raise WeightsError(
            f"sidecar d2 {config.d2} disagrees with weights d2 {d2}"
        )
    return B, config
