"""Latent flow-matching model, its training loop, inference, and baselines.

The model is four networks sharing a latent width d: a data encoder
(x -> z0), a label encoder (y -> z1), a label decoder (z -> y), and a
time-conditioned dynamics function (z, t -> velocity). Training regresses the
dynamics onto the schedule's target velocity between the *learned* endpoint
embeddings while a label autoencoding term keeps the label embedding
informative. Inference encodes x, integrates the dynamics from t=0 to t=1,
and decodes.

Two baselines live here as well: a classic continuous-depth model trained by
backpropagating through an unrolled fixed-step solve, and velocity regression
directly in data space on fixed (zero-padded) endpoints, which fails whenever
the data-space chords cross.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import PairedDataset, TaskKind, denormalize_y
from .nn import AdamState, Mlp, adam_step, cosine_lr
from .objectives import LossBreakdown, TimeSampler, flow_loss, total_loss
from .schedules import Schedule, get_schedule
from .solvers import SolveResult, SolverSpec, solve, solve_with_grad
from .tensor import Tensor, backward, mean_all, no_grad, sq_diff_rowsum

__all__ = [
    "ModelSpec",
    "LatentFlowModel",
    "build_model",
    "save_model",
    "load_model_params",
    "predict",
    "TrainConfig",
    "TrainingAbort",
    "LogEntry",
    "TrainLog",
    "train",
    "evaluate_metric",
    "rmse",
    "mse",
    "accuracy",
    "NodeBaseline",
    "build_node_baseline",
    "node_baseline_train",
    "DirectFlowModel",
    "build_direct_fm",
    "direct_fm_train",
]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; serializable into the run manifest.

    ``latent_dim=None`` resolves to 2 * max(d_x, d_y) + 2, which keeps the
    latent strictly wider than both observation spaces (the regime where
    non-crossing embeddings are guaranteed to exist). Label encoder and
    decoder are single linear layers.
    """

    d_x: int
    d_y: int
    task: TaskKind
    schedule: str = "linear"
    latent_dim: int | None = None
    enc_hidden: int = 64
    enc_depth: int = 2
    dyn_hidden: int = 64
    dyn_depth: int = 3
    enc_activation: str = "relu"
    dyn_activation: str = "tanh"

    def resolved_latent_dim(self) -> int:
        if self.latent_dim is not None:
            return self.latent_dim
        return 2 * max(self.d_x, self.d_y) + 2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = {"kind": self.task.kind, "num_classes": self.task.num_classes}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        t = d.pop("task")
        return cls(task=TaskKind(t["kind"], t.get("num_classes")), **d)


class LatentFlowModel:
    """The four networks plus the schedule; see the module docstring."""

    def __init__(self, spec: ModelSpec, data_encoder: Mlp, label_encoder: Mlp,
                 label_decoder: Mlp, dynamics: Mlp):
        d = spec.resolved_latent_dim()
        if not (data_encoder.d_out == label_encoder.d_out == dynamics.d_out == d
                and dynamics.d_in == d and label_decoder.d_in == d):
            raise ValueError("all four networks must agree on the latent width")
        self.spec = spec
        self.data_encoder = data_encoder
        self.label_encoder = label_encoder
        self.label_decoder = label_decoder
        self.dynamics = dynamics
        self.schedule: Schedule = get_schedule(spec.schedule)

    @property
    def task(self) -> TaskKind:
        return self.spec.task

    def encode_data(self, x) -> Tensor:
        return self.data_encoder.forward(x)

    def encode_label(self, y) -> Tensor:
        return self.label_encoder.forward(y)

    def decode_label(self, z) -> Tensor:
        return self.label_decoder.forward(z)

    def velocity(self, z, t) -> Tensor:
        return self.dynamics.forward(z, t)

    def parameters(self) -> list[Tensor]:
        return (self.data_encoder.parameters() + self.label_encoder.parameters()
                + self.label_decoder.parameters() + self.dynamics.parameters())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, net in (("f", self.data_encoder), ("g", self.label_encoder),
                            ("d", self.label_decoder), ("h", self.dynamics)):
            out.extend((f"{prefix}.{name}", p) for name, p in net.named_parameters())
        return out

    def predict_raw(self, x, solver_spec: SolverSpec) -> tuple[np.ndarray, SolveResult]:
        """Encode, integrate the dynamics over [0, 1], decode. No gradients."""
        with no_grad():
            z0 = self.encode_data(np.asarray(x, dtype=np.float64)).data
            res = solve(self._field, z0, 0.0, 1.0, solver_spec)
            out = self.decode_label(res.z_final.data).data
        return out, res

    def _field(self, z: np.ndarray, t: float) -> np.ndarray:
        return self.dynamics.forward(z, t).data


def build_model(spec: ModelSpec, seed: int = 0) -> LatentFlowModel:
    rng = np.random.default_rng(seed)
    d = spec.resolved_latent_dim()
    enc_dims = [spec.d_x] + [spec.enc_hidden] * (spec.enc_depth - 1) + [d]
    dyn_dims = [d] + [spec.dyn_hidden] * (spec.dyn_depth - 1) + [d]
    data_encoder = Mlp.build(enc_dims, activation=spec.enc_activation, rng=rng, name="enc")
    label_encoder = Mlp.build([spec.d_y, d], activation=spec.enc_activation, rng=rng, name="lenc")
    label_decoder = Mlp.build([d, spec.d_y], activation=spec.enc_activation, rng=rng, name="ldec")
    dynamics = Mlp.build(dyn_dims, activation=spec.dyn_activation,
                         time_conditioned=True, rng=rng, name="dyn")
    return LatentFlowModel(spec, data_encoder, label_encoder, label_decoder, dynamics)


def save_model(path, model: LatentFlowModel) -> None:
    from .nn import save_checkpoint

    save_checkpoint(path, model.named_parameters())


def load_model_params(path, model: LatentFlowModel) -> None:
    from .nn import load_checkpoint

    loaded = load_checkpoint(path)
    for name, p in model.named_parameters():
        if name not in loaded:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        arr = loaded[name]
        if arr.shape != p.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr


def predict(model, x, solver_spec: SolverSpec) -> tuple[np.ndarray, int]:
    """Model prediction plus the solver's per-sample NFE.

    For classification the decoder output is reduced by argmax over the class
    axis (ties resolve to the lowest index); regression returns raw outputs.
    """
    out, res = model.predict_raw(x, solver_spec)
    if model.task.is_classification:
        return np.argmax(out, axis=1), res.nfe
    return out, res.nfe


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(pred) - np.asarray(target))))


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(mse(pred, target)))


def accuracy(pred_idx: np.ndarray, target_onehot: np.ndarray) -> float:
    return float(np.mean(pred_idx == np.argmax(target_onehot, axis=1)))


def evaluate_metric(model, ds: PairedDataset, solver_spec: SolverSpec) -> tuple[float, int]:
    """RMSE in original units for regression, accuracy for classification."""
    if model.task.is_classification:
        pred, nfe = predict(model, ds.x, solver_spec)
        return accuracy(pred, ds.y), nfe
    out, res = model.predict_raw(ds.x, solver_spec)
    return rmse(denormalize_y(ds, out), denormalize_y(ds, ds.y)), res.nfe


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    p_zero: float = 0.1
    sigma: float = 0.1
    seed: int = 0
    eval_interval: int = 1000
    patience: int = 10
    eval_solver: SolverSpec = field(default_factory=lambda: SolverSpec.euler(1))
    log_every: int = 1

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("iterations must be >= 0, batch_size >= 1, lr > 0")
        if self.eval_interval < 1 or self.patience < 1 or self.log_every < 1:
            raise ValueError("eval_interval, patience and log_every must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        return cosine_lr(step, max(self.iterations, 1), self.lr)


class TrainingAbort(RuntimeError):
    """Non-finite loss; carries the step index and the loss breakdown."""

    def __init__(self, step: int, breakdown: LossBreakdown):
        self.step = step
        self.breakdown = breakdown
        super().__init__(
            f"non-finite loss at step {step}: flow={breakdown.flow_loss!r} "
            f"label_ae={breakdown.label_ae_loss!r} total={breakdown.total!r}"
        )


@dataclass
class LogEntry:
    step: int
    lr: float
    flow_loss: float
    ae_loss: float
    val_metric: float | None = None
    train_nfe: int = 1

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "lr": self.lr,
            "flow_loss": self.flow_loss,
            "ae_loss": self.ae_loss,
            "val_metric": self.val_metric,
            "train_nfe": self.train_nfe,
        }


@dataclass
class TrainLog:
    entries: list[LogEntry]
    stopped_early: bool = False
    best_val: float | None = None
    final_train_nfe_per_step: float = 1.0


def _batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray | None:
    # Full-batch regimes skip the RNG so logs stay stable across batch sizes.
    if batch_size >= n:
        return None
    return rng.choice(n, size=batch_size, replace=False)


def _lower_is_better(task: TaskKind, metric: float) -> float:
    return metric if not task.is_classification else 1.0 - metric


def train(model: LatentFlowModel, train_ds: PairedDataset, cfg: TrainConfig,
          val_ds: PairedDataset | None = None) -> TrainLog:
    """Minibatch optimization of the combined flow + label autoencoding loss.

    Each step draws a minibatch and per-sample times, takes one Adam step at
    the scheduled rate, and costs exactly one dynamics evaluation. With a
    validation set, the metric is checked every ``eval_interval`` steps and
    training stops after ``patience`` non-improving rounds, restoring the
    best-validation parameters.
    """
    if train_ds.d_x != model.spec.d_x or train_ds.d_y != model.spec.d_y:
        raise ValueError(
            f"dataset dims ({train_ds.d_x}, {train_ds.d_y}) do not match model "
            f"spec ({model.spec.d_x}, {model.spec.d_y})"
        )
    params = model.parameters()
    state = AdamState.for_params(params)
    batch_ss, time_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_batch = np.random.default_rng(batch_ss)
    rng_noise = np.random.default_rng(noise_ss)
    sampler = TimeSampler(cfg.p_zero, seed=time_ss)

    entries: list[LogEntry] = []
    best_snapshot: list[np.ndarray] | None = None
    best_score: float | None = None
    bad_rounds = 0
    stopped_early = False

    for step in range(cfg.iterations):
        lr = cfg.lr_at(step)
        idx = _batch_indices(rng_batch, train_ds.n, cfg.batch_size)
        bx = train_ds.x if idx is None else train_ds.x[idx]
        by = train_ds.y if idx is None else train_ds.y[idx]
        loss_t, bd = total_loss(model, bx, by, sampler, cfg.sigma, rng_noise)
        if not np.isfinite(bd.total):
            raise TrainingAbort(step, bd)
        grads = backward(loss_t, params)
        adam_step(params, grads, state, lr)

        val_metric = None
        if val_ds is not None and (step + 1) % cfg.eval_interval == 0:
            val_metric, _ = evaluate_metric(model, val_ds, cfg.eval_solver)
            score = _lower_is_better(model.task, val_metric)
            if best_score is None or score < best_score:
                best_score = score
                best_snapshot = [p.data.copy() for p in params]
                bad_rounds = 0
            else:
                bad_rounds += 1
        if step % cfg.log_every == 0 or val_metric is not None or step == cfg.iterations - 1:
            entries.append(LogEntry(step, lr, bd.flow_loss, bd.label_ae_loss, val_metric))
        if val_ds is not None and bad_rounds >= cfg.patience:
            stopped_early = True
            break

    if best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.data = snap
    best_val = None
    if best_score is not None:
        best_val = (1.0 - best_score) if model.task.is_classification else best_score
    return TrainLog(entries, stopped_early=stopped_early, best_val=best_val)


class NodeBaseline:
    """Continuous-depth model trained by unrolling a fixed-step solver.

    State lives in data space (identity encoder) unless an encoder is given;
    the decoder defaults to a single trainable linear layer. Training
    backpropagates through the unrolled solve, so each step costs n_steps
    dynamics evaluations for Euler (4x for RK4).
    """

    def __init__(self, dynamics: Mlp, decoder: Mlp | None, task: TaskKind,
                 encoder: Mlp | None = None):
        self.encoder = encoder
        self.dynamics = dynamics
        self.decoder = decoder
        self.task = task

    def parameters(self) -> list[Tensor]:
        out = []
        for net in (self.encoder, self.dynamics, self.decoder):
            if net is not None:
                out.extend(net.parameters())
        return out

    def forward_tape(self, x: np.ndarray, n_steps: int, method: str) -> tuple[Tensor, int]:
        z0 = Tensor(x) if self.encoder is None else self.encoder.forward(x)
        z1, nfe = solve_with_grad(
            lambda z, t: self.dynamics.forward(z, t), z0, 0.0, 1.0, n_steps, method
        )
        out = z1 if self.decoder is None else self.decoder.forward(z1)
        return out, nfe

    def predict_raw(self, x, solver_spec: SolverSpec) -> tuple[np.ndarray, SolveResult]:
        with no_grad():
            x = np.asarray(x, dtype=np.float64)
            z0 = x if self.encoder is None else self.encoder.forward(x).data
            res = solve(lambda z, t: self.dynamics.forward(z, t).data,
                        z0, 0.0, 1.0, solver_spec)
            out = res.z_final.data
            if self.decoder is not None:
                out = self.decoder.forward(out).data
        return out, res


def build_node_baseline(d_x: int, d_y: int, task: TaskKind, hidden: int = 64,
                        depth: int = 3, seed: int = 0,
                        linear_decoder: bool = True) -> NodeBaseline:
    rng = np.random.default_rng(seed)
    dynamics = Mlp.build([d_x] + [hidden] * (depth - 1) + [d_x], activation="tanh",
                         time_conditioned=True, rng=rng, name="dyn")
    decoder = None
    if linear_decoder:
        decoder = Mlp.build([d_x, d_y], activation="tanh", rng=rng, name="dec")
    elif d_x != d_y:
        raise ValueError("identity decoder requires d_x == d_y")
    return NodeBaseline(dynamics, decoder, task)


def node_baseline_train(node: NodeBaseline, train_ds: PairedDataset, n_steps: int,
                        cfg: TrainConfig, method: str = "euler",
                        val_ds: PairedDataset | None = None) -> TrainLog:
    """Discretize-then-optimize supervised training of the baseline."""
    params = node.parameters()
    state = AdamState.for_params(params)
    rng_batch = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    entries: list[LogEntry] = []
    per_step_nfe = n_steps if method == "euler" else 4 * n_steps

    for step in range(cfg.iterations):
        lr = cfg.lr_at(step)
        idx = _batch_indices(rng_batch, train_ds.n, cfg.batch_size)
        bx = train_ds.x if idx is None else train_ds.x[idx]
        by = train_ds.y if idx is None else train_ds.y[idx]
        out, nfe = node.forward_tape(bx, n_steps, method)
        loss_t = mean_all(sq_diff_rowsum(out, Tensor(by)))
        loss = loss_t.item()
        if not np.isfinite(loss):
            raise TrainingAbort(step, LossBreakdown(loss, 0.0, loss))
        grads = backward(loss_t, params)
        adam_step(params, grads, state, lr)
        val_metric = None
        if val_ds is not None and (step + 1) % cfg.eval_interval == 0:
            val_metric, _ = evaluate_metric(node, val_ds, cfg.eval_solver)
        if step % cfg.log_every == 0 or step == cfg.iterations - 1 or val_metric is not None:
            entries.append(LogEntry(step, lr, loss, 0.0, val_metric, train_nfe=nfe))
    return TrainLog(entries, final_train_nfe_per_step=float(per_step_nfe))


class DirectFlowModel:
    """Velocity regression in data space on fixed endpoints.

    x and y are zero-padded to a common width; there are no learned encoders,
    so crossing chords make the target velocity multivalued and the learned
    field averages them at intersections. Serves as the failing control.
    """

    def __init__(self, dynamics: Mlp, schedule: Schedule, d_x: int, d_y: int,
                 task: TaskKind):
        self.dynamics = dynamics
        self.schedule = schedule
        self.d_x = d_x
        self.d_y = d_y
        self.d = max(d_x, d_y)
        self.task = task

    def _pad(self, a: np.ndarray, width: int) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[1] == width:
            return a
        out = np.zeros((a.shape[0], width))
        out[:, : a.shape[1]] = a
        return out

    def encode_data(self, x) -> Tensor:
        return Tensor(self._pad(x, self.d))

    def encode_label(self, y) -> Tensor:
        return Tensor(self._pad(y, self.d))

    def decode_label(self, z):
        arr = z.data if isinstance(z, Tensor) else np.asarray(z)
        return Tensor(arr[:, : self.d_y])

    def velocity(self, z, t) -> Tensor:
        return self.dynamics.forward(z, t)

    def parameters(self) -> list[Tensor]:
        return self.dynamics.parameters()

    def predict_raw(self, x, solver_spec: SolverSpec) -> tuple[np.ndarray, SolveResult]:
        with no_grad():
            z0 = self._pad(np.asarray(x, dtype=np.float64), self.d)
            res = solve(lambda z, t: self.dynamics.forward(z, t).data,
                        z0, 0.0, 1.0, solver_spec)
        return res.z_final.data[:, : self.d_y], res


def build_direct_fm(d_x: int, d_y: int, task: TaskKind, schedule: str = "linear",
                    hidden: int = 64, depth: int = 3, seed: int = 0) -> DirectFlowModel:
    d = max(d_x, d_y)
    rng = np.random.default_rng(seed)
    dynamics = Mlp.build([d] + [hidden] * (depth - 1) + [d], activation="tanh",
                         time_conditioned=True, rng=rng, name="dyn")
    return DirectFlowModel(dynamics, get_schedule(schedule), d_x, d_y, task)


def direct_fm_train(model: DirectFlowModel, train_ds: PairedDataset,
                    cfg: TrainConfig) -> TrainLog:
    """Train the dynamics alone on fixed data-space endpoints."""
    params = model.parameters()
    state = AdamState.for_params(params)
    batch_ss, time_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_batch = np.random.default_rng(batch_ss)
    sampler = TimeSampler(cfg.p_zero, seed=time_ss)
    entries: list[LogEntry] = []

    for step in range(cfg.iterations):
        lr = cfg.lr_at(step)
        idx = _batch_indices(rng_batch, train_ds.n, cfg.batch_size)
        bx = train_ds.x if idx is None else train_ds.x[idx]
        by = train_ds.y if idx is None else train_ds.y[idx]
        times = sampler.sample(bx.shape[0])
        loss_t = flow_loss(model, bx, by, times)
        loss = loss_t.item()
        if not np.isfinite(loss):
            raise TrainingAbort(step, LossBreakdown(loss, 0.0, loss))
        grads = backward(loss_t, params)
        adam_step(params, grads, state, lr)
        if step % cfg.log_every == 0 or step == cfg.iterations - 1:
            entries.append(LogEntry(step, lr, loss, 0.0))
    return TrainLog(entries)
