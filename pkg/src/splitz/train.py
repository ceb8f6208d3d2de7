"""Training with noise at the split point and a thresholded Lipschitz penalty.

Per batch the objective is

    (1 - lam) * mean_i mean_q CE(f_R(f_L(x_i) + delta_q), y_i)
        + lam * mean_i max(theta_lip, L_gamma(x_i))

where ``L_gamma`` is the reduced-norm local bound of ``f_L``. The penalty
gradient treats the indicator masks and singular vectors as constants.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset
from .lipschitz import batch_local_lipschitz
from .network import GradientTape, Network, backward, forward, init_network, predict
from .numerics import RngStream

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    sigma: float = 0.25
    lambda_start: float = 0.0
    lambda_end: float | None = None
    theta_lip: float = 0.5
    learn_theta: bool = False
    gamma_train: float = 1.0
    Q: int = 1
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_decay: float = 0.1
    lr_decay_every: int = 0
    momentum: float = 0.0
    power_iters: int = 0
    seed: int = 0
    hidden: tuple[int, ...] = (16, 16)
    split_index: int = 1
    clip_threshold: float = 1.0

    def __post_init__(self):
        if isinstance(self.hidden, str):
            self.hidden = tuple(int(h) for h in self.hidden.split(",") if h.strip())
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lambda_end is None:
            self.lambda_end = self.lambda_start
        for lam in (self.lambda_start, self.lambda_end):
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        if self.Q < 1:
            raise ValueError("Q must be at least 1")
        if self.gamma_train < 0 or self.sigma < 0:
            raise ValueError("gamma_train and sigma must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.split_index <= len(self.hidden) + 1:
            raise ValueError("split_index outside the architecture")

    def lambda_at(self, epoch: int) -> float:
        """Linear schedule from ``lambda_start`` to ``lambda_end`` across the epochs."""
        if self.epochs == 1:
            return self.lambda_start
        t = epoch / (self.epochs - 1)
        return self.lambda_start + t * (self.lambda_end - self.lambda_start)

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_config_text(text: str, overrides: dict | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Keys are :class:`TrainConfig` field names; ``lambda`` sets both ends of
    the schedule. Entries in ``overrides`` win over the text.
    """
    types = {f.name: f.type for f in fields(TrainConfig)}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        raw[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = str(value)
    if "lambda" in raw:
        value = raw.pop("lambda")
        raw.setdefault("lambda_start", value)
        raw.setdefault("lambda_end", value)
    values = {}
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        kind = types[key]
        if "bool" in kind:
            if value.lower() not in _BOOL:
                raise ValueError(f"{key}: expected a boolean, got {value!r}")
            values[key] = _BOOL[value.lower()]
        elif kind.startswith("int"):
            values[key] = int(value)
        elif "float" in kind:
            values[key] = None if value.lower() == "none" else float(value)
        else:
            values[key] = value
    return TrainConfig(**values)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class LossParts:
    loss: float
    cross_entropy: float
    regularizer: float
    mean_lipschitz: float
    theta_grad: float


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _softmax_ce(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(labels.size)
    log_z = np.log(exp.sum(axis=1))
    losses = log_z - shifted[rows, labels]
    probs[rows, labels] -= 1.0
    return losses, probs


def noise_draws(net: Network, n: int, cfg: TrainConfig, rng) -> list[np.ndarray]:
    """The ``Q`` noise batches added at the split point, in draw order."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return [cfg.sigma * gen.standard_normal((n, net.hidden_dim)) for _ in range(cfg.Q)]


def regularizer_gradient(net: Network, x, gamma_train: float, power_iters: int = 0,
                         theta_lip: float = 0.0, weight: float = 1.0) -> tuple[GradientTape, np.ndarray]:
    """Gradient of ``weight * sum_i max(theta_lip, L(x_i))`` w.r.t. the weights.

    Each reduced-norm factor contributes ``u v^T`` (its top singular pair),
    scaled by the product of the other factors. Biases get no gradient since
    they enter only through the masks. Returns the tape and the per-example
    bounds.
    """
    tape = GradientTape.zeros_like(net)
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    if net.split_index == 0:
        return tape, np.ones(xs.shape[0])
    lip = batch_local_lipschitz(net, xs, gamma_train, power_iters or None)
    active = lip.bounds > theta_lip
    for k in range(net.split_index):
        n_k = lip.norms[:, k]
        coef = np.where(active & (n_k > 0), lip.bounds / np.where(n_k > 0, n_k, 1.0), 0.0)
        tape.weights[k] = weight * np.einsum("b,bi,bj->ij", coef, lip.left[k], lip.right[k])
    return tape, lip.bounds


def splitz_loss(net: Network, xs, ys, cfg: TrainConfig, rng, lam: float | None = None,
                theta_lip: float | None = None) -> tuple[LossParts, GradientTape]:
    """Batch loss and its parameter gradient.

    ``rng`` supplies the ``Q`` noise draws; passing the same stream twice
    gives the same loss, which is what finite-difference checks rely on.
    With ``split_index`` 0 the penalty is a constant and ``lam`` is ignored.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=np.int64).reshape(-1)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    if xs.shape[1] != net.input_dim or ys.shape[0] != xs.shape[0]:
        raise ValueError("batch shape does not match the network")
    lam = cfg.lambda_start if lam is None else lam
    theta = cfg.theta_lip if theta_lip is None else theta_lip
    if net.split_index == 0:
        lam = 0.0
    n = xs.shape[0]

    tape = GradientTape.zeros_like(net)
    ce_total = 0.0
    if lam < 1.0:
        scale = (1.0 - lam) / (n * cfg.Q)
        for noise in noise_draws(net, n, cfg, rng):
            losses, dlogits = _softmax_ce(forward(net, xs, split_noise=noise), ys)
            ce_total += losses.sum() / (n * cfg.Q)
            tape.add_(backward(net, xs, dlogits * scale, split_noise=noise))

    reg, mean_lip, theta_grad = 0.0, 1.0, 0.0
    if net.split_index > 0:
        if lam > 0.0:
            reg_tape, bounds = regularizer_gradient(
                net, xs, cfg.gamma_train, cfg.power_iters, theta, lam / n)
            tape.add_(reg_tape)
        else:
            bounds = batch_local_lipschitz(net, xs, cfg.gamma_train, cfg.power_iters or None).bounds
        reg = float(np.mean(np.maximum(theta, bounds)))
        mean_lip = float(np.mean(bounds))
        theta_grad = lam * float(np.mean(bounds <= theta))
    else:
        reg = max(theta, 1.0)
    loss = (1.0 - lam) * ce_total + lam * reg
    return LossParts(loss, ce_total, reg, mean_lip, theta_grad), tape


def evaluate_clean(net: Network, data: Dataset) -> float:
    """Fraction of inputs whose noise-free argmax matches the label."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(net, data.features) == data.labels))


def train(cfg: TrainConfig, train_data: Dataset, val_data: Dataset | None = None):
    """Mini-batch SGD on :func:`splitz_loss`; returns the best-validation snapshot.

    Ties in validation accuracy go to the later epoch. Fully determined by
    ``cfg.seed``.
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    val_data = train_data if val_data is None else val_data
    root = RngStream(cfg.seed)
    sizes = [train_data.dim, *cfg.hidden, train_data.num_classes]
    net = init_network(sizes, cfg.clip_threshold, cfg.split_index, root.child(0))
    velocity = GradientTape.zeros_like(net)
    theta = cfg.theta_lip
    report = TrainReport()
    best_acc, best_net = -1.0, net.copy()
    step = 0
    n = len(train_data)
    for epoch in range(cfg.epochs):
        lam = cfg.lambda_at(epoch)
        lr = cfg.lr_at(epoch)
        order = root.child(1_000_000 + epoch).generator().permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            parts, grad = splitz_loss(net, train_data.features[idx], train_data.labels[idx],
                                      cfg, root.child(2_000_000 + step), lam, theta)
            if not np.isfinite(parts.loss) or not np.all(np.isfinite(grad.flat())):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: loss={parts.loss}, "
                    f"ce={parts.cross_entropy}, reg={parts.regularizer}, lr={lr}"
                )
            velocity.scale_(cfg.momentum).add_(grad)
            for layer, dw, db in zip(net.layers, velocity.weights, velocity.biases):
                layer.weight -= lr * dw
                layer.bias -= lr * db
            if cfg.learn_theta:
                theta = max(0.0, theta - lr * parts.theta_grad)
            sums += (parts.loss, parts.regularizer, parts.mean_lipschitz)
            batches += 1
            step += 1
        acc = evaluate_clean(net, val_data)
        row = {
            "epoch": epoch,
            "lambda": lam,
            "learning_rate": lr,
            "theta_lip": theta,
            "loss": sums[0] / batches,
            "regularizer": sums[1] / batches,
            "mean_lipschitz": sums[2] / batches,
            "val_accuracy": acc,
        }
        report.epochs.append(row)
        log.info("epoch %d loss %.4f L %.3f acc %.3f", epoch, row["loss"], row["mean_lipschitz"], acc)
        if acc >= best_acc:
            best_acc, best_net, report.best_epoch = acc, net.copy(), epoch
    return best_net, report
