"""Feed-forward response model over [covariates, treatment].

The input layer concatenates standardized numeric features, learned
embeddings of the categorical codes, and the raw treatment bit. Hidden
layers use relu or tanh; the single output unit is a logit, clamped to
[-30, 30] before the sigmoid so probabilities stay strictly inside (0, 1).
The predicted uplift of a subject is forward(x, 1) - forward(x, 0).

`backward` computes exact analytic gradients of a batch loss made of
per-pass binary cross-entropy terms plus an optional pairwise soft term
lam * (target - (p_treated - p_control))^2, mean-reduced over loss units.
A `lam` of exactly 0 skips the soft term entirely (no 0-weighted
arithmetic), which training relies on for bit-exact reductions.

Models with a "regression" head reuse the same stack with a raw linear
output and squared-error loss (see `backward_mse`); used by the transformed
outcome baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, FeatureSchema
from .errors import DomainError, ParseError, SchemaError, TrainingError

MODEL_FORMAT = "student-model/v1"
LOGIT_CLAMP = 30.0
PROB_EPS = 1e-7


@dataclass(frozen=True)
class StudentConfig:
    """Architecture and optimization settings for the response model."""

    hidden_sizes: tuple[int, ...] = (64, 32)
    embedding_dim: int = 8
    activation: str = "relu"
    optimizer: str = "adam"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 1e-2
    lr_decay_factor: float = 0.1
    lr_decay_patience: int = 3
    init_seed: int = 0

    def validate(self) -> None:
        if any(h < 1 for h in self.hidden_sizes):
            raise DomainError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        if self.embedding_dim < 1:
            raise DomainError(f"embedding_dim={self.embedding_dim} must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise DomainError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise DomainError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not (0.0 <= self.momentum < 1.0):
            raise DomainError(f"momentum={self.momentum} must lie in [0, 1)")
        if not (self.learning_rate > 0):
            raise DomainError(f"learning_rate={self.learning_rate} must be > 0")
        if not (0.0 < self.lr_decay_factor < 1.0):
            raise DomainError(f"lr_decay_factor={self.lr_decay_factor} must lie in (0, 1)")
        if self.lr_decay_patience < 1:
            raise DomainError(f"lr_decay_patience={self.lr_decay_patience} must be >= 1")


@dataclass
class StudentModel:
    """Parameters plus the data statistics baked in at init time."""

    config: StudentConfig
    schema: FeatureSchema
    head: str  # "binary" | "regression"
    num_mean: np.ndarray
    num_std: np.ndarray
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def param_items(self):
        """(name, array) pairs in a fixed order shared with GradientBuffer."""
        for j, e in enumerate(self.embeddings):
            yield f"embedding[{j}]", e
        for l, w in enumerate(self.weights):
            yield f"weights[{l}]", w
        for l, b in enumerate(self.biases):
            yield f"biases[{l}]", b

    def param_arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.param_items()]


@dataclass
class GradientBuffer:
    """Gradient arrays mirroring StudentModel's parameters."""

    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: StudentModel) -> "GradientBuffer":
        return cls(
            embeddings=[np.zeros_like(e) for e in model.embeddings],
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def param_items(self):
        for j, e in enumerate(self.embeddings):
            yield f"embedding[{j}]", e
        for l, w in enumerate(self.weights):
            yield f"weights[{l}]", w
        for l, b in enumerate(self.biases):
            yield f"biases[{l}]", b

    def param_arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.param_items()]


class LossParts(tuple):
    """(total, hard, soft) losses of one batch, mean-reduced over units."""

    __slots__ = ()

    def __new__(cls, total: float, hard: float, soft: float):
        return super().__new__(cls, (total, hard, soft))

    @property
    def total(self) -> float:
        return self[0]

    @property
    def hard(self) -> float:
        return self[1]

    @property
    def soft(self) -> float:
        return self[2]


@dataclass
class LossBatch:
    """One gradient step's worth of forward passes and loss terms.

    Each of the P passes is a (row, treatment-bit) pair with an outcome and
    a BCE weight (0 for counterfactual passes that only feed a soft term).
    `kd_pairs` holds (treated-pass, control-pass) index pairs whose predicted
    difference is pulled toward `kd_targets` with weight `lam`; it must be
    empty when lam == 0. `n_units` is the mean-reduction denominator.
    """

    X: np.ndarray
    T: np.ndarray
    y: np.ndarray
    bce_weight: np.ndarray
    kd_pairs: np.ndarray
    kd_targets: np.ndarray
    lam: float
    n_units: int


def init_student(
    cfg: StudentConfig,
    train: Dataset,
    head: str = "binary",
    final_bias: float | None = None,
) -> StudentModel:
    """Initialize a model against a training set.

    Numeric standardization statistics come from the training split
    (zero-variance columns standardize to 0). Dense layers draw from
    U(-sqrt(6/(fan_in+fan_out)), +...), embeddings from U(-0.05, 0.05), in a
    fixed order given init_seed. The final bias defaults to the logit of the
    training positive rate for binary heads and must be supplied for
    regression heads by the caller that knows the target scale.
    """
    cfg.validate()
    if head not in ("binary", "regression"):
        raise DomainError(f"head must be 'binary' or 'regression', got {head!r}")
    schema = train.schema
    num_idx = schema.numeric_indices
    cat_idx = schema.categorical_indices
    if num_idx.size:
        num_mean = train.features[:, num_idx].mean(axis=0)
        num_std = train.features[:, num_idx].std(axis=0)
        num_std = np.where(num_std == 0.0, 1.0, num_std)
    else:
        num_mean = np.zeros(0)
        num_std = np.ones(0)

    rng = np.random.default_rng(cfg.init_seed)
    embeddings = []
    for ci in map(int, cat_idx):
        card = schema.columns[ci].cardinality
        embeddings.append(rng.uniform(-0.05, 0.05, size=(card, cfg.embedding_dim)))
    d_in = int(num_idx.size + cat_idx.size * cfg.embedding_dim + 1)
    dims = [d_in] + list(cfg.hidden_sizes) + [1]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if final_bias is None:
        if head == "binary":
            pos = float(np.clip(train.outcome.mean(), 1e-6, 1.0 - 1e-6))
            final_bias = float(np.log(pos / (1.0 - pos)))
        else:
            final_bias = 0.0
    biases[-1][0] = final_bias
    return StudentModel(
        config=cfg,
        schema=schema,
        head=head,
        num_mean=num_mean,
        num_std=num_std,
        embeddings=embeddings,
        weights=weights,
        biases=biases,
    )


def _assemble_input(model: StudentModel, X: np.ndarray, T: np.ndarray):
    """Build the input layer; returns (h0, codes per categorical column)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.schema.columns):
        raise SchemaError(
            f"feature matrix has shape {X.shape}, schema expects "
            f"(*, {len(model.schema.columns)})"
        )
    parts = []
    num_idx = model.schema.numeric_indices
    cat_idx = model.schema.categorical_indices
    if num_idx.size:
        parts.append((X[:, num_idx] - model.num_mean) / model.num_std)
    codes = None
    if cat_idx.size:
        codes = X[:, cat_idx].astype(np.int64)
        for j in range(cat_idx.size):
            parts.append(model.embeddings[j][codes[:, j]])
    parts.append(np.asarray(T, dtype=np.float64).reshape(-1, 1))
    return np.concatenate(parts, axis=1), codes


def _forward_cached(model: StudentModel, X: np.ndarray, T: np.ndarray):
    """Raw output logits plus the activations needed by backprop."""
    h0, codes = _assemble_input(model, X, T)
    hs = [h0]
    ss = []
    h = h0
    n_layers = len(model.weights)
    for l in range(n_layers - 1):
        s = h @ model.weights[l] + model.biases[l]
        h = np.maximum(s, 0.0) if model.config.activation == "relu" else np.tanh(s)
        ss.append(s)
        hs.append(h)
    z_raw = (h @ model.weights[-1]).ravel() + model.biases[-1][0]
    return z_raw, hs, ss, codes


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def forward_batch(model: StudentModel, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Predicted outcome probability per row (binary head)."""
    if model.head != "binary":
        raise DomainError("forward_batch needs a binary-head model")
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise DomainError("non-finite feature value")
    z_raw, _, _, _ = _forward_cached(model, X, T)
    return _sigmoid(np.clip(z_raw, -LOGIT_CLAMP, LOGIT_CLAMP))


def forward(model: StudentModel, x: np.ndarray, t: int) -> float:
    """Predicted outcome probability for one subject under treatment t."""
    return float(forward_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1), np.array([t]))[0])


def raw_output_batch(model: StudentModel, X: np.ndarray) -> np.ndarray:
    """Unclamped linear output per row (regression head; treatment input 0)."""
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise DomainError("non-finite feature value")
    z_raw, _, _, _ = _forward_cached(model, X, np.zeros(X.shape[0]))
    return z_raw


def predict_uplift_batch(model: StudentModel, X: np.ndarray) -> np.ndarray:
    """forward(x, 1) - forward(x, 0) per row."""
    X = np.asarray(X, dtype=np.float64)
    ones = np.ones(X.shape[0])
    return forward_batch(model, X, ones) - forward_batch(model, X, 1.0 - ones)


def predict_uplift_student(model: StudentModel, x: np.ndarray) -> float:
    return float(predict_uplift_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def bce(y: float, y_hat: float) -> float:
    """Binary cross-entropy with the prediction clamped to
    [1e-7, 1 - 1e-7]."""
    p = min(max(float(y_hat), PROB_EPS), 1.0 - PROB_EPS)
    y = float(y)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _bce_vec(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def batch_loss(model: StudentModel, batch: LossBatch) -> LossParts:
    """Loss of a batch without gradients; same reduction as `backward`."""
    z_raw, _, _, _ = _forward_cached(model, batch.X, batch.T)
    p = _sigmoid(np.clip(z_raw, -LOGIT_CLAMP, LOGIT_CLAMP))
    hard = float(np.sum(batch.bce_weight * _bce_vec(batch.y, p)))
    if batch.lam != 0.0 and batch.kd_pairs.shape[0]:
        gaps = batch.kd_targets - (p[batch.kd_pairs[:, 0]] - p[batch.kd_pairs[:, 1]])
        soft = float(np.sum(gaps**2))
        total = (hard + batch.lam * soft) / batch.n_units
    else:
        soft = 0.0
        total = hard / batch.n_units
    return LossParts(total, hard / batch.n_units, soft / batch.n_units)


def backward(
    model: StudentModel, batch: LossBatch, return_loss: bool = False
) -> GradientBuffer | tuple[GradientBuffer, LossParts]:
    """Exact analytic gradient of the batch loss for every parameter.

    The gradient respects the forward path's clamps: passes whose logit sits
    outside [-30, 30], or whose probability is pinned by the BCE clamp,
    contribute zero through the clamped term. Raises TrainingError naming
    the parameter if any gradient is non-finite.
    """
    z_raw, hs, ss, codes = _forward_cached(model, batch.X, batch.T)
    z = np.clip(z_raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    p = _sigmoid(z)

    in_band = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    dz = batch.bce_weight * (p - batch.y) * in_band
    hard = float(np.sum(batch.bce_weight * _bce_vec(batch.y, p)))
    soft = 0.0
    if batch.lam != 0.0 and batch.kd_pairs.shape[0]:
        it = batch.kd_pairs[:, 0]
        ic = batch.kd_pairs[:, 1]
        diff = p[it] - p[ic]
        gaps = batch.kd_targets - diff
        soft = float(np.sum(gaps**2))
        g = 2.0 * batch.lam * (diff - batch.kd_targets)
        sig_grad = p * (1.0 - p)
        np.add.at(dz, it, g * sig_grad[it])
        np.add.at(dz, ic, -g * sig_grad[ic])
    dz = dz * (np.abs(z_raw) < LOGIT_CLAMP)
    dz /= batch.n_units

    grads = _backprop(model, hs, ss, codes, dz)
    for name, arr in grads.param_items():
        if not np.isfinite(arr).all():
            raise TrainingError(f"non-finite gradient in {name}")
    if return_loss:
        if batch.lam != 0.0 and batch.kd_pairs.shape[0]:
            total = (hard + batch.lam * soft) / batch.n_units
        else:
            total = hard / batch.n_units
        return grads, LossParts(total, hard / batch.n_units, soft / batch.n_units)
    return grads


def backward_mse(
    model: StudentModel,
    X: np.ndarray,
    targets: np.ndarray,
    n_units: int,
    return_loss: bool = False,
):
    """Gradient of mean squared error of the raw output against `targets`
    (regression head); reduction divides by n_units."""
    z_raw, hs, ss, codes = _forward_cached(model, X, np.zeros(X.shape[0]))
    resid = z_raw - targets
    dz = 2.0 * resid / n_units
    grads = _backprop(model, hs, ss, codes, dz)
    for name, arr in grads.param_items():
        if not np.isfinite(arr).all():
            raise TrainingError(f"non-finite gradient in {name}")
    if return_loss:
        loss = float(np.sum(resid**2)) / n_units
        return grads, LossParts(loss, loss, 0.0)
    return grads


def _backprop(model: StudentModel, hs, ss, codes, dz: np.ndarray) -> GradientBuffer:
    """Propagate per-pass output gradients dz through the stack."""
    grads = GradientBuffer(
        embeddings=[np.zeros_like(e) for e in model.embeddings],
        weights=[None] * len(model.weights),
        biases=[None] * len(model.biases),
    )
    g = dz[:, None]
    for l in range(len(model.weights) - 1, -1, -1):
        grads.weights[l] = hs[l].T @ g
        grads.biases[l] = g.sum(axis=0)
        g = g @ model.weights[l].T
        if l > 0:
            if model.config.activation == "relu":
                g = g * (ss[l - 1] > 0.0)
            else:
                g = g * (1.0 - hs[l] ** 2)
    # g now holds the gradient at the input layer; route embedding blocks
    num_n = model.schema.numeric_indices.size
    emb_dim = model.config.embedding_dim
    for j in range(len(model.embeddings)):
        block = g[:, num_n + j * emb_dim : num_n + (j + 1) * emb_dim]
        np.add.at(grads.embeddings[j], codes[:, j], block)
    return grads


@dataclass
class OptimizerState:
    """Per-parameter slot arrays plus the current learning rate."""

    kind: str
    lr: float
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray] = field(default_factory=list)


def init_optimizer(cfg: StudentConfig, model: StudentModel) -> OptimizerState:
    params = model.param_arrays()
    return OptimizerState(
        kind=cfg.optimizer,
        lr=cfg.learning_rate,
        step=0,
        m=[np.zeros_like(a) for a in params],
        v=[np.zeros_like(a) for a in params] if cfg.optimizer == "adam" else [],
    )


def apply_update(model: StudentModel, grads: GradientBuffer, state: OptimizerState) -> None:
    """One optimizer step, in place. Deterministic given (params, grads,
    state); mutates both the model parameters and the state."""
    cfg = model.config
    params = model.param_arrays()
    gs = grads.param_arrays()
    if state.kind == "sgd":
        for p, g, vel in zip(params, gs, state.m):
            vel *= cfg.momentum
            vel += g
            p -= state.lr * vel
    else:
        state.step += 1
        bc1 = 1.0 - cfg.beta1**state.step
        bc2 = 1.0 - cfg.beta2**state.step
        for p, g, m, v in zip(params, gs, state.m, state.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clone_params(model: StudentModel) -> list[np.ndarray]:
    return [a.copy() for a in model.param_arrays()]


def restore_params(model: StudentModel, snapshot: list[np.ndarray]) -> None:
    for a, s in zip(model.param_arrays(), snapshot):
        a[...] = s


def student_to_jsonable(model: StudentModel) -> dict:
    cfg = model.config
    return {
        "format": MODEL_FORMAT,
        "head": model.head,
        "config": {
            "hidden_sizes": list(cfg.hidden_sizes),
            "embedding_dim": cfg.embedding_dim,
            "activation": cfg.activation,
            "optimizer": cfg.optimizer,
            "momentum": cfg.momentum,
            "beta1": cfg.beta1,
            "beta2": cfg.beta2,
            "eps": cfg.eps,
            "learning_rate": cfg.learning_rate,
            "lr_decay_factor": cfg.lr_decay_factor,
            "lr_decay_patience": cfg.lr_decay_patience,
            "init_seed": cfg.init_seed,
        },
        "schema": model.schema.to_jsonable(),
        "num_mean": model.num_mean.tolist(),
        "num_std": model.num_std.tolist(),
        "embeddings": [e.tolist() for e in model.embeddings],
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def student_from_jsonable(obj: dict) -> StudentModel:
    if obj.get("format") != MODEL_FORMAT:
        raise ParseError(f"not a student model document (format {obj.get('format')!r})")
    c = obj["config"]
    cfg = StudentConfig(
        hidden_sizes=tuple(int(h) for h in c["hidden_sizes"]),
        embedding_dim=int(c["embedding_dim"]),
        activation=c["activation"],
        optimizer=c["optimizer"],
        momentum=float(c["momentum"]),
        beta1=float(c["beta1"]),
        beta2=float(c["beta2"]),
        eps=float(c["eps"]),
        learning_rate=float(c["learning_rate"]),
        lr_decay_factor=float(c["lr_decay_factor"]),
        lr_decay_patience=int(c["lr_decay_patience"]),
        init_seed=int(c["init_seed"]),
    )
    return StudentModel(
        config=cfg,
        schema=FeatureSchema.from_jsonable(obj["schema"]),
        head=obj["head"],
        num_mean=np.array(obj["num_mean"], dtype=np.float64),
        num_std=np.array(obj["num_std"], dtype=np.float64),
        embeddings=[np.array(e, dtype=np.float64) for e in obj["embeddings"]],
        weights=[np.array(w, dtype=np.float64) for w in obj["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in obj["biases"]],
    )


def save_student(model: StudentModel, path: str) -> None:
    """Serialize to versioned JSON; reloads to bit-identical predictions."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(student_to_jsonable(model), fh)
        fh.write("\n")


def load_student(path: str) -> StudentModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None
    return student_from_jsonable(obj)
