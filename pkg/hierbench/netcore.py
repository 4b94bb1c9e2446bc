#!/usr/bin/env python3
"""
Hand-differentiated classifier for hierbench
MLP feature extractor g followed by a linear head f_{W,b}, float64 throughout,
with explicit backward passes and an Adam optimizer.
"""

import json
import logging
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax as _scipy_log_softmax
from scipy.special import softmax

from .errors import DimensionMismatch, NonFiniteInput, ShapeMismatch

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "hierbench-checkpoint/1"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ShapeMismatch(f"Unknown activation '{self.activation}'")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(f"Layer weight {self.weight.shape} and bias {self.bias.shape} disagree")


@dataclass
class Mlp:
    """Feature extractor g; an empty layer list is the identity map"""

    input_dim: int
    layers: List[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.weight.shape[1] != width:
                raise DimensionMismatch(f"Layer {i} expects {layer.weight.shape[1]} inputs, chain gives {width}")
            width = layer.weight.shape[0]
        if self.layers and self.layers[-1].activation != "identity":
            raise ShapeMismatch("Final extractor layer must use the identity activation")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0] if self.layers else self.input_dim


@dataclass
class LinearHead:
    weights: np.ndarray  # (n_classes, m)
    bias: np.ndarray  # (n_classes,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(f"Head weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]


@dataclass
class Classifier:
    extractor: Mlp
    head: LinearHead

    def __post_init__(self):
        if self.extractor.output_dim != self.head.m:
            raise DimensionMismatch(
                f"Extractor emits {self.extractor.output_dim} features, head expects {self.head.m}"
            )

    @property
    def input_dim(self) -> int:
        return self.extractor.input_dim

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: layer weights/biases, then the head"""
        params = []
        for layer in self.extractor.layers:
            params.extend([layer.weight, layer.bias])
        params.extend([self.head.weights, self.head.bias])
        return params

    def extractor_parameters(self) -> List[np.ndarray]:
        return self.parameters()[:-2]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax logit per row, lowest index on ties"""
        return np.argmax(forward(self, x), axis=-1)


# ---------------------------------------------------------------- construction

def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def make_classifier(
    input_dim: int,
    n_classes: int,
    hidden_width: int = 32,
    hidden_layers: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> Classifier:
    """ReLU MLP with `hidden_layers` hidden layers, an identity feature layer and a linear head"""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    width = input_dim
    for _ in range(hidden_layers):
        layers.append(DenseLayer(_uniform(rng, (hidden_width, width), width), _uniform(rng, (hidden_width,), width), "relu"))
        width = hidden_width
    if hidden_layers > 0:
        layers.append(DenseLayer(_uniform(rng, (hidden_width, width), width), _uniform(rng, (hidden_width,), width), "identity"))
        width = hidden_width
    head = LinearHead(_uniform(rng, (n_classes, width), width), _uniform(rng, (n_classes,), width))
    return Classifier(Mlp(input_dim, layers), head)


@dataclass
class InitSpec:
    """How resize_head fills the new head: zeros, scaled-uniform, or explicit rows"""

    kind: str = "uniform"
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    rng: Optional[np.random.Generator] = None


def resize_head(c: Classifier, new_n_classes: int, init: InitSpec) -> Classifier:
    """New classifier sharing the extractor's values, with a freshly allocated head"""
    if new_n_classes < 1:
        raise DimensionMismatch(f"new_n_classes must be >= 1, got {new_n_classes}")
    m = c.head.m
    if init.kind == "zeros":
        head = LinearHead(np.zeros((new_n_classes, m)), np.zeros(new_n_classes))
    elif init.kind == "uniform":
        rng = init.rng if init.rng is not None else np.random.default_rng(0)
        head = LinearHead(_uniform(rng, (new_n_classes, m), m), _uniform(rng, (new_n_classes,), m))
    elif init.kind == "explicit":
        if init.weights is None or init.bias is None:
            raise ShapeMismatch("explicit head init needs weights and bias")
        weights = np.array(init.weights, dtype=np.float64)
        bias = np.array(init.bias, dtype=np.float64)
        if weights.shape != (new_n_classes, m) or bias.shape != (new_n_classes,):
            raise DimensionMismatch(
                f"explicit head {weights.shape}/{bias.shape} does not match ({new_n_classes}, {m})"
            )
        head = LinearHead(weights, bias)
    else:
        raise ShapeMismatch(f"Unknown head init '{init.kind}'")
    return Classifier(deepcopy(c.extractor), head)


# --------------------------------------------------------------------- forward

def _as_batch(c: Classifier, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != c.input_dim:
        raise DimensionMismatch(f"Input shape {x.shape} does not match input_dim {c.input_dim}")
    return batch, single


def _trace(c: Classifier, batch: np.ndarray):
    """Forward pass keeping each layer's input and pre-activation"""
    inputs, pres = [], []
    h = batch
    for layer in c.extractor.layers:
        inputs.append(h)
        pre = h @ layer.weight.T + layer.bias
        pres.append(pre)
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    logits = h @ c.head.weights.T + c.head.bias
    return inputs, pres, h, logits


def forward(c: Classifier, x: np.ndarray) -> np.ndarray:
    """Logits z_i = W_i g(x) + b_i for one input (1-D) or a batch (2-D)"""
    batch, single = _as_batch(c, x)
    logits = _trace(c, batch)[3]
    return logits[0] if single else logits


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("log_softmax received non-finite logits")
    return _scipy_log_softmax(z, axis=-1)


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row CE losses and their logit gradients softmax(z) - onehot(y)"""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    losses = -log_softmax(logits)[rows, labels]
    grad = softmax(logits, axis=-1)
    grad[rows, labels] -= 1.0
    return losses, grad


# -------------------------------------------------------------------- backward

def _backward(c: Classifier, inputs, pres, features, grad_logits):
    """Returns (per-sample input grads, summed parameter grads in parameters() order)"""
    head_w = grad_logits.T @ features
    head_b = grad_logits.sum(axis=0)
    upstream = grad_logits @ c.head.weights
    layer_grads: List[np.ndarray] = []
    for layer, a_in, pre in zip(reversed(c.extractor.layers), reversed(inputs), reversed(pres)):
        # ReLU subgradient at 0 is 0
        d_pre = upstream * (pre > 0.0) if layer.activation == "relu" else upstream
        layer_grads[:0] = [d_pre.T @ a_in, d_pre.sum(axis=0)]
        upstream = d_pre @ layer.weight
    return upstream, layer_grads + [head_w, head_b]


def _grad_batch(c: Classifier, batch: np.ndarray, loss_grad: np.ndarray) -> np.ndarray:
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.ndim == 1:
        loss_grad = loss_grad[None, :]
    if loss_grad.shape != (batch.shape[0], c.n_classes):
        raise DimensionMismatch(
            f"Loss gradient shape {loss_grad.shape} does not match ({batch.shape[0]}, {c.n_classes})"
        )
    return loss_grad


def input_gradient(c: Classifier, x: np.ndarray, loss_grad_wrt_logits: np.ndarray) -> np.ndarray:
    """dL/dx by the chain rule; row-wise for a batch"""
    batch, single = _as_batch(c, x)
    grad = _grad_batch(c, batch, loss_grad_wrt_logits)
    inputs, pres, features, _ = _trace(c, batch)
    dx, _ = _backward(c, inputs, pres, features, grad)
    return dx[0] if single else dx


def param_gradient(c: Classifier, x: np.ndarray, loss_grad_wrt_logits: np.ndarray) -> List[np.ndarray]:
    """Batch-averaged parameter gradients, aligned with Classifier.parameters()"""
    batch, _ = _as_batch(c, x)
    grad = _grad_batch(c, batch, loss_grad_wrt_logits)
    inputs, pres, features, _ = _trace(c, batch)
    _, grads = _backward(c, inputs, pres, features, grad)
    scale = 1.0 / batch.shape[0]
    return [g * scale for g in grads]


def joint_gradient(c: Classifier, x: np.ndarray, loss_grad_wrt_logits: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """One backward pass yielding per-sample input grads and batch-averaged parameter grads"""
    batch, _ = _as_batch(c, x)
    grad = _grad_batch(c, batch, loss_grad_wrt_logits)
    inputs, pres, features, _ = _trace(c, batch)
    dx, grads = _backward(c, inputs, pres, features, grad)
    scale = 1.0 / batch.shape[0]
    return dx, [g * scale for g in grads]


# ------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """Bias-corrected Adam update applied in place; no weight decay"""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatch(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"Parameter {p.shape}, gradient {g.shape}, moment {m.shape}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps_num)
    return params, state


# ------------------------------------------------------------------ checkpoint

def _flat(arr: np.ndarray) -> List[float]:
    return [float(v) for v in np.ravel(arr, order="C")]


def checkpoint_dict(c: Classifier, tree_path: Optional[str] = None, height: int = 0, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    data = {
        "format": CHECKPOINT_FORMAT,
        "input_dim": c.input_dim,
        "layers": [
            {
                "in": int(layer.weight.shape[1]),
                "out": int(layer.weight.shape[0]),
                "activation": layer.activation,
                "weight": _flat(layer.weight),
                "bias": _flat(layer.bias),
            }
            for layer in c.extractor.layers
        ],
        "head": {
            "n_classes": c.n_classes,
            "m": c.head.m,
            "weights": _flat(c.head.weights),
            "bias": _flat(c.head.bias),
        },
        "tree_path": tree_path,
        "height": height,
    }
    if extra:
        data["extra"] = extra
    return data


def save_checkpoint(c: Classifier, path: Union[str, Path], tree_path: Optional[str] = None, height: int = 0, extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_dict(c, tree_path, height, extra), f)
        f.write("\n")
    logger.info(f"Saved checkpoint to {path}")
    return path


def classifier_from_dict(data: Dict[str, Any]) -> Classifier:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ShapeMismatch(f"Unrecognised checkpoint format {data.get('format')!r}")
    layers = []
    for spec in data["layers"]:
        weight = np.array(spec["weight"], dtype=np.float64).reshape(spec["out"], spec["in"])
        layers.append(DenseLayer(weight, np.array(spec["bias"], dtype=np.float64), spec["activation"]))
    head = data["head"]
    weights = np.array(head["weights"], dtype=np.float64).reshape(head["n_classes"], head["m"])
    return Classifier(Mlp(int(data["input_dim"]), layers), LinearHead(weights, np.array(head["bias"], dtype=np.float64)))


def load_checkpoint(path: Union[str, Path]) -> Tuple[Classifier, Dict[str, Any]]:
    """Returns the classifier and the checkpoint metadata (tree_path, height, extra)"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    meta = {"tree_path": data.get("tree_path"), "height": data.get("height", 0), "extra": data.get("extra", {})}
    return classifier_from_dict(data), meta
