"""Multi-input multi-output network-of-networks forecaster.

Each resource owns a private feed-forward sub-network: resource ``i``'s
input nodes connect only to resource ``i``'s hidden nodes, and so on up to
the output set.  Hidden units use the logistic sigmoid, the output is
linear, and there are no bias terms, so one resource's weight block is

    l*h  +  h*h*(n_hidden_layers - 1)  +  h*o

numbers.  The flat genome stores blocks resource-major, then layer by
layer, each layer as a row-major (source set, destination set) matrix.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .resources import N_RESOURCES, ResourceVector
from .trace import NormRecord, SeriesTooShortError, VmSeries, denormalize, normalize_minmax


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkLayout:
    n_resources: int = N_RESOURCES
    l: int = 6
    h: int = 8
    n_hidden_layers: int = 2
    output_sets: int = 1

    def __post_init__(self):
        for name in ("n_resources", "l", "h", "n_hidden_layers", "output_sets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.output_sets != 1:
            raise ValueError("only one-step-ahead forecasting (output_sets=1) is supported")

    @property
    def weights_per_resource(self) -> int:
        l, h, o = self.l, self.h, self.output_sets
        return l * h + h * h * (self.n_hidden_layers - 1) + h * o

    @property
    def n_weights(self) -> int:
        return self.n_resources * self.weights_per_resource

    @property
    def input_size(self) -> int:
        return self.l * self.n_resources

    def block(self, resource: int) -> slice:
        """Slice of the flat genome owned by ``resource``."""
        w = self.weights_per_resource
        return slice(resource * w, (resource + 1) * w)


@dataclass(frozen=True)
class NetworkGenome:
    layout: NetworkLayout
    weights: np.ndarray
    fitness: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != self.layout.n_weights:
            raise ShapeError(f"expected {self.layout.n_weights} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("genome weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def with_fitness(self, fitness: float) -> "NetworkGenome":
        return NetworkGenome(self.layout, self.weights, float(fitness))

    def to_dict(self) -> dict:
        return {"layout": asdict(self.layout), "weights": self.weights.tolist(), "fitness": self.fitness}

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkGenome":
        return cls(NetworkLayout(**data["layout"]), np.asarray(data["weights"], dtype=float), data.get("fitness"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "NetworkGenome":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Prediction:
    vm_id: str
    predicted: ResourceVector
    denormalized: ResourceVector
    insufficient_history: bool = False


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_many(layout: NetworkLayout, weights, inputs) -> np.ndarray:
    """Evaluate P weight vectors on m inputs at once.

    ``weights`` is (P, n_weights) or (n_weights,); ``inputs`` is
    (m, l*n) or (l*n,).  Returns (P, m, n) squeezed to match the inputs.
    """
    W = np.asarray(weights, dtype=float)
    X = np.asarray(inputs, dtype=float)
    single_genome = W.ndim == 1
    single_input = X.ndim == 1
    W = np.atleast_2d(W)
    X = np.atleast_2d(X)
    if W.shape[1] != layout.n_weights:
        raise ShapeError(f"expected {layout.n_weights} weights, got {W.shape[1]}")
    if X.shape[1] != layout.input_size:
        raise ShapeError(f"expected input length {layout.input_size}, got {X.shape[1]}")

    P, m = W.shape[0], X.shape[0]
    n, l, h, o = layout.n_resources, layout.l, layout.h, layout.output_sets
    blocks = W.reshape(P, n, layout.weights_per_resource)
    n_in, n_hid = l * h, h * h * (layout.n_hidden_layers - 1)
    w_in = blocks[:, :, :n_in].reshape(P, n, l, h)
    w_hid = blocks[:, :, n_in:n_in + n_hid].reshape(P, n, layout.n_hidden_layers - 1, h, h)
    w_out = blocks[:, :, n_in + n_hid:].reshape(P, n, h, o)

    # (m, l, n) -> (n, m, l): each resource sees only its own lag column
    x = X.reshape(m, l, n).transpose(2, 0, 1)
    a = _sigmoid(np.einsum("nml,pnlh->pnmh", x, w_in))
    for k in range(layout.n_hidden_layers - 1):
        a = _sigmoid(np.einsum("pnmh,pnhk->pnmk", a, w_hid[:, :, k]))
    y = np.einsum("pnmh,pnho->pnmo", a, w_out)[..., 0]  # (P, n, m)
    out = y.transpose(0, 2, 1)
    if single_input:
        out = out[:, 0, :]
    if single_genome:
        out = out[0]
    return out


def forward(genome: NetworkGenome, inputs) -> np.ndarray:
    """Forecast the next step (length n) for one flat input of length l*n."""
    return forward_many(genome.layout, genome.weights, inputs)


def rmse(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ShapeError("rmse of an empty matrix")
    return float(np.sqrt(np.mean((a - p) ** 2)))


def rmse_per_resource(actual, predicted) -> np.ndarray:
    a = np.atleast_2d(np.asarray(actual, dtype=float))
    p = np.atleast_2d(np.asarray(predicted, dtype=float))
    if a.shape != p.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {p.shape}")
    return np.sqrt(np.mean((a - p) ** 2, axis=0))


def predict_next(genome: NetworkGenome, series: VmSeries, norm_record: NormRecord) -> Prediction:
    """Forecast the step after ``series`` (already Min-Max scaled)."""
    l = genome.layout.l
    if len(series) < l:
        raise SeriesTooShortError(f"need at least l = {l} intervals, got {len(series)}")
    window = series.values[-l:].reshape(-1)
    raw = forward(genome, window)
    denorm = np.clip(denormalize(raw, norm_record), 0.0, 1.0)
    return Prediction(series.vm_id, ResourceVector.of(raw), ResourceVector.of(denorm))


def forecast_many(genome: NetworkGenome, histories: dict[str, np.ndarray]) -> dict[str, Prediction]:
    """Predict the next step for many raw (unscaled) usage histories at once.

    Each history is scaled by its own Min-Max record.  Histories shorter than
    ``l`` fall back to their last observation (or zeros) and are flagged.
    """
    l = genome.layout.l
    ready, rows, records = [], [], []
    out: dict[str, Prediction] = {}
    for vm_id in sorted(histories):
        values = np.atleast_2d(np.asarray(histories[vm_id], dtype=float))
        if values.shape[0] < l or values.size == 0:
            last = values[-1] if values.size else np.zeros(genome.layout.n_resources)
            last_v = ResourceVector.of(np.clip(last, 0.0, 1.0))
            out[vm_id] = Prediction(vm_id, last_v, last_v, insufficient_history=True)
            continue
        scaled, record = normalize_minmax(VmSeries(vm_id, values))
        ready.append(vm_id)
        rows.append(scaled.values[-l:].reshape(-1))
        records.append(record)
    if ready:
        raw = forward_many(genome.layout, genome.weights, np.vstack(rows))
        raw = np.atleast_2d(raw)
        for vm_id, r, rec in zip(ready, raw, records):
            denorm = np.clip(denormalize(r, rec), 0.0, 1.0)
            out[vm_id] = Prediction(vm_id, ResourceVector.of(r), ResourceVector.of(denorm))
    return {k: out[k] for k in sorted(out)}
