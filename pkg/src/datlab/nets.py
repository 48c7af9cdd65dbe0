"""Generator, domain classifier and task network built on :mod:`datlab.autodiff`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from datlab import autodiff as ad
from datlab.autodiff import Node, ShapeError


class NetsValidationError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "tanh"
    output: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise NetsValidationError("MlpSpec needs at least input and output widths")
        if any(w <= 0 for w in self.layer_widths):
            raise NetsValidationError(f"layer widths must be positive: {self.layer_widths}")
        if self.hidden_activation not in ("tanh", "relu"):
            raise NetsValidationError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output not in ("linear", "softmax"):
            raise NetsValidationError(f"unknown output {self.output!r}")


@dataclass
class ModelParams:
    """Weights ``[in x out]`` and biases ``[out]`` per layer, as leaf nodes."""

    spec: MlpSpec
    weights: list[Node]
    biases: list[Node]

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.spec.layer_widths[i], self.spec.layer_widths[i + 1]):
                raise ShapeError(f"layer {i} weight shape {w.shape} breaks the chain")
            if b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i} bias shape {b.shape} does not fit {w.shape}")

    @property
    def in_width(self) -> int:
        return self.spec.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.spec.layer_widths[-1]

    def parameters(self) -> list[Node]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            [Node(w.value.copy()) for w in self.weights],
            [Node(b.value.copy()) for b in self.biases],
        )


def init_params(spec: MlpSpec, seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Node(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(Node(np.zeros(fan_out)))
    return ModelParams(spec, weights, biases)


def mlp_forward(params: ModelParams, x, return_hidden: bool = False):
    """Run the MLP; with ``return_hidden`` also return the penultimate activations."""
    x = ad.as_node(x)
    if x.value.ndim != 2 or x.shape[1] != params.in_width:
        raise ShapeError(f"input shape {x.shape} does not match MLP input width {params.in_width}")
    act = ad.tanh if params.spec.hidden_activation == "tanh" else ad.relu
    h = x
    penultimate = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.bias_add(ad.matmul(h, w), b)
        if i < n - 1:
            h = act(h)
            penultimate = h
    if params.spec.output == "softmax":
        h = ad.softmax_rows(h)
    return (h, penultimate) if return_hidden else h


@dataclass
class DatModel:
    """Parameter sets of the generator, domain classifier and task network.

    ``domain_embedding`` is only set for the linear-embedding baseline; it
    maps a one-hot domain identity to a ``q``-wide vector appended to the
    task-network input.
    """

    generator: ModelParams
    domain_classifier: ModelParams
    task_net: ModelParams
    lam: float = 1.0
    domain_feature: str = "none"  # none | onehot | linear
    domain_embedding: Node | None = None
    n_domain_inputs: int = 0

    def __post_init__(self):
        e = self.generator.out_width
        if self.domain_classifier.in_width != e:
            raise ShapeError("domain classifier input width must equal embedding width")
        if self.domain_classifier.out_width < 2:
            raise NetsValidationError("domain classifier needs at least 2 classes")
        extra = {
            "none": 0,
            "onehot": self.n_domain_inputs,
            "linear": 0 if self.domain_embedding is None else self.domain_embedding.shape[1],
        }[self.domain_feature]
        if self.task_net.in_width != e + extra:
            raise ShapeError(
                f"task net input width {self.task_net.in_width} != embedding {e} + domain feature {extra}"
            )
        if self.lam < 0:
            raise NetsValidationError("lambda must be >= 0")

    @property
    def embed_dim(self) -> int:
        return self.generator.out_width

    def parameters(self) -> list[Node]:
        out = self.generator.parameters() + self.domain_classifier.parameters() + self.task_net.parameters()
        if self.domain_embedding is not None:
            out.append(self.domain_embedding)
        return out

    def domain_feature_node(self, domain_ids) -> Node | None:
        if self.domain_feature == "none":
            return None
        onehot = np.eye(self.n_domain_inputs)[np.asarray(domain_ids)]
        if self.domain_feature == "onehot":
            return Node(onehot, op="const")
        return ad.matmul(Node(onehot, op="const"), self.domain_embedding)


def build_dat_model(
    input_dim: int,
    n_domain_classes: int,
    n_task_classes: int,
    *,
    embed_dim: int = 16,
    generator_hidden: Sequence[int] = (32, 32),
    classifier_hidden: Sequence[int] = (32,),
    task_hidden: Sequence[int] = (32,),
    activation: str = "tanh",
    lam: float = 1.0,
    domain_feature: str = "none",
    n_domain_inputs: int = 0,
    embedding_width: int = 4,
    seed: int = 0,
) -> DatModel:
    ss = np.random.SeedSequence(seed)
    s_g, s_c, s_r, s_e = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    g = init_params(MlpSpec((input_dim, *generator_hidden, embed_dim), activation), s_g)
    c = init_params(MlpSpec((embed_dim, *classifier_hidden, n_domain_classes), activation, "softmax"), s_c)
    emb = None
    extra = 0
    if domain_feature == "onehot":
        extra = n_domain_inputs
    elif domain_feature == "linear":
        bound = np.sqrt(6.0 / (n_domain_inputs + embedding_width))
        emb = Node(np.random.default_rng(s_e).uniform(-bound, bound, (n_domain_inputs, embedding_width)))
        extra = embedding_width
    elif domain_feature != "none":
        raise NetsValidationError(f"unknown domain feature {domain_feature!r}")
    r = init_params(MlpSpec((embed_dim + extra, *task_hidden, n_task_classes), activation, "softmax"), s_r)
    return DatModel(g, c, r, lam, domain_feature, emb, n_domain_inputs)


def forward_generator(g: ModelParams, x) -> Node:
    return mlp_forward(g, x)


def forward_classifier(c: ModelParams, z: Node, reverse: bool = False, lam: float = 1.0) -> Node:
    if reverse:
        z = ad.grad_reverse(z, lam)
    return mlp_forward(c, z)


def forward_task(r: ModelParams, z: Node, domain_feature: Node | None = None) -> Node:
    if domain_feature is not None:
        z = ad.concat_cols(z, domain_feature)
    return mlp_forward(r, z)


def _hard_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise NetsValidationError("hard labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= n):
        raise NetsValidationError(f"label out of range [0, {n})")
    return y


def domain_loss(probs: Node, labels) -> Node:
    """Mean cross-entropy against hard integer labels or soft label rows."""
    lab = np.asarray(labels)
    if lab.ndim == 2:
        return ad.cross_entropy_soft(probs, lab)
    return ad.cross_entropy_hard(probs, _hard_labels(lab, probs.shape[1]))


def task_loss(probs: Node, labels) -> Node:
    return ad.cross_entropy_hard(probs, _hard_labels(labels, probs.shape[1]))


@dataclass
class FitResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)


def fit_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    spec: MlpSpec,
    *,
    epochs: int,
    alpha: float = 0.1,
    batch_size: int = 64,
    seed: int = 0,
) -> FitResult:
    """Train a softmax MLP with minibatch SGD; returns params and per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    params = init_params(spec, int(rng.integers(2**63)))
    x = np.asarray(features, dtype=np.float64)
    y = _hard_labels(labels, spec.layer_widths[-1])
    result = FitResult(params)
    plist = params.parameters()
    for _ in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            loss = task_loss(mlp_forward(params, x[idx]), y[idx])
            ad.zero_grad(plist)
            ad.backward(loss)
            ad.sgd_step(plist, alpha)
            total += float(loss.value) * len(idx)
        result.losses.append(total / len(x))
    return result


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return mlp_forward(params, x).value
