"""Structured network for the heterogeneous coefficient functions.

The network body maps socio-demographics w to the free coefficient
vector (the parameter layer); the model layer combines those outputs
with the alternative attributes x and the observed choice y into the
mean negative log-likelihood of the conditional logit. Training pushes
the exact per-observation score back through the network, so the
coefficient functions are learned inside the economic structure. The
attributes x feed only the model layer, never the network inputs.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from . import choice_core, nn_core
from .choice_core import CoefficientBundle
from .data import ChoiceDataset
from .errors import InputError

SAVE_MAGIC = "hetlogit-delta-model v1"


def default_delta_spec(input_dim: int, n_alternatives: int, n_attributes: int,
                       **overrides) -> nn_core.NetworkSpec:
    """Coefficient-function network defaults: 100 relu units, dropout 0.2."""
    base = dict(
        input_dim=input_dim,
        hidden_widths=(100,),
        output_dim=n_alternatives - 1 + n_attributes,
        dropout_rate=0.2,
        l2_penalty=0.0,
        max_epochs=20000,
        batch_size=50,
        loss_tolerance=1e-8,
        patience=100,
    )
    base.update(overrides)
    return nn_core.NetworkSpec(**base)


@dataclass(frozen=True)
class DeltaModel:
    params: nn_core.NetworkParams
    n_alternatives: int
    n_attributes: int
    reference: int
    feature_names: tuple[str, ...]
    alt_names: tuple[str, ...]
    attr_names: tuple[str, ...]

    @property
    def n_free(self) -> int:
        return self.n_alternatives - 1 + self.n_attributes

    @property
    def in_sample_loss(self) -> float:
        return min(self.params.trace) if self.params.trace else np.nan


def delta_loss_adapter(data: ChoiceDataset):
    """Mean negative log-likelihood over a mini-batch, with its exact gradient.

    The gradient of the batch loss with respect to the network outputs
    is the per-observation score divided by the batch size, which is
    the chain rule through the model layer.
    """
    y, x, ref = data.y, data.x, data.reference

    def adapter(outputs: np.ndarray, batch_idx: np.ndarray):
        yb, xb = y[batch_idx], x[batch_idx]
        loss = -float(np.mean(choice_core.batch_log_likelihood(yb, xb, outputs, ref)))
        grad = choice_core.batch_scores(yb, xb, outputs, ref) / len(batch_idx)
        return loss, grad

    return adapter


def fit_delta(data: ChoiceDataset, spec: nn_core.NetworkSpec) -> DeltaModel:
    if data.n == 0:
        raise InputError("cannot fit on an empty dataset")
    if spec.input_dim != data.n_features:
        raise InputError(f"spec.input_dim {spec.input_dim} != data width {data.n_features}")
    if spec.output_dim != data.n_free:
        raise InputError(f"spec.output_dim {spec.output_dim} != free length {data.n_free}")
    params = nn_core.fit(spec, data.w, delta_loss_adapter(data))
    return DeltaModel(
        params=params,
        n_alternatives=data.n_alternatives,
        n_attributes=data.n_attributes,
        reference=data.reference,
        feature_names=data.w_names,
        alt_names=data.alt_names,
        attr_names=data.attr_names,
    )


def predict_delta_matrix(model: DeltaModel, w: np.ndarray) -> np.ndarray:
    """Evaluation-mode free coefficient vectors, one row per observation."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape[1] != model.params.spec.input_dim:
        raise InputError(f"feature width {w.shape[1]} != model input {model.params.spec.input_dim}")
    return nn_core.forward(model.params, w, train_mode=False)


def predict_delta(model: DeltaModel, w: np.ndarray) -> CoefficientBundle:
    free = predict_delta_matrix(model, w)[0]
    return CoefficientBundle.from_free(free, model.n_alternatives, model.reference)


def mean_log_likelihood(model: DeltaModel, data: ChoiceDataset) -> float:
    free = predict_delta_matrix(model, data.w)
    return float(np.mean(choice_core.batch_log_likelihood(data.y, data.x, free, data.reference)))


# ---------------------------------------------------------------------------
# save / load: one header line, a JSON metadata line, then row-major matrices
# ---------------------------------------------------------------------------

def _write_array(out, name, a):
    a = np.atleast_2d(a)
    out.write(f"{name} {a.shape[0]} {a.shape[1]}\n")
    for row in a:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_delta(model: DeltaModel, path) -> None:
    spec = model.params.spec
    header = {
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_widths": list(spec.hidden_widths),
            "output_dim": spec.output_dim,
            "dropout_rate": spec.dropout_rate,
            "l2_penalty": spec.l2_penalty,
            "max_epochs": spec.max_epochs,
            "batch_size": spec.batch_size,
            "loss_tolerance": spec.loss_tolerance,
            "patience": spec.patience,
            "seed": spec.seed,
        },
        "n_alternatives": model.n_alternatives,
        "n_attributes": model.n_attributes,
        "reference": model.reference,
        "feature_names": list(model.feature_names),
        "alt_names": list(model.alt_names),
        "attr_names": list(model.attr_names),
    }
    buf = io.StringIO()
    buf.write(SAVE_MAGIC + "\n")
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    for layer, (w, b) in enumerate(zip(model.params.weights, model.params.biases)):
        _write_array(buf, f"W{layer}", w)
        _write_array(buf, f"b{layer}", b)
    with open(path, "w") as handle:
        handle.write(buf.getvalue())


def load_delta(path) -> DeltaModel:
    with open(path) as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != SAVE_MAGIC:
        raise InputError(f"not a delta model dump: {path}")
    header = json.loads(lines[1])
    spec = nn_core.NetworkSpec(
        input_dim=header["spec"]["input_dim"],
        hidden_widths=tuple(header["spec"]["hidden_widths"]),
        output_dim=header["spec"]["output_dim"],
        dropout_rate=header["spec"]["dropout_rate"],
        l2_penalty=header["spec"]["l2_penalty"],
        max_epochs=header["spec"]["max_epochs"],
        batch_size=header["spec"]["batch_size"],
        loss_tolerance=header["spec"]["loss_tolerance"],
        patience=header["spec"]["patience"],
        seed=header["spec"]["seed"],
    )
    pos = 2
    weights, biases = [], []
    n_layers = len(spec.hidden_widths) + 1
    for layer in range(n_layers):
        for prefix, sink in ((f"W{layer}", weights), (f"b{layer}", biases)):
            tag, rows, cols = lines[pos].split()
            if tag != prefix:
                raise InputError(f"expected block {prefix}, found {tag}")
            rows, cols = int(rows), int(cols)
            block = np.array(
                [[float(v) for v in lines[pos + 1 + r].split()] for r in range(rows)])
            sink.append(block if prefix.startswith("W") else block[0])
            pos += 1 + rows
    params = nn_core.NetworkParams(spec=spec, weights=tuple(weights), biases=tuple(biases))
    return DeltaModel(
        params=params,
        n_alternatives=header["n_alternatives"],
        n_attributes=header["n_attributes"],
        reference=header["reference"],
        feature_names=tuple(header["feature_names"]),
        alt_names=tuple(header["alt_names"]),
        attr_names=tuple(header["attr_names"]),
    )
