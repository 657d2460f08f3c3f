"""Layer specifications, partitioned parameters and the forward/backward passes."""
import hashlib
import logging
from typing import FrozenSet, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..utils import DimensionError, InputError, ProtocolError
from .losses import cross_entropy, cross_entropy_logit_grad, idd_loss, idd_prob_grad

logger = logging.getLogger(__name__)

PARTITIONS = ("generator", "head")
PROB_FLOOR = np.finfo(np.float64).tiny
PROB_CEIL = 1.0 - np.finfo(np.float64).epsneg


class LayerSpec(BaseModel):
    """One layer of the architecture descriptor."""
    kind: Literal["linear", "relu", "dropout", "softmax"]
    in_features: Optional[int] = Field(default=None, ge=1)
    out_features: Optional[int] = Field(default=None, ge=1)
    rate: float = Field(default=0.0, ge=0.0, lt=1.0)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def check_features(self):
        has_dims = self.in_features is not None or self.out_features is not None
        if self.kind == "linear" and (self.in_features is None or self.out_features is None):
            raise ValueError("linear layers need in_features and out_features")
        if self.kind != "linear" and has_dims:
            raise ValueError(f"{self.kind} layers take no feature dimensions")
        return self

    def describe(self) -> str:
        if self.kind == "linear":
            return f"linear({self.in_features}->{self.out_features})"
        if self.kind == "dropout":
            return f"dropout({self.rate})"
        return self.kind


class ArchitectureSpec(BaseModel):
    """Architecture of a generator G followed by a classification head F."""
    input_dim: int = Field(ge=1)
    generator: List[LayerSpec]
    head: List[LayerSpec]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("generator", "head")
    @classmethod
    def not_empty(cls, v):
        if not v:
            raise ValueError("a partition needs at least one layer")
        return v

    @model_validator(mode="after")
    def check_chain(self):
        width = self.input_dim
        for where, layers in (("generator", self.generator), ("head", self.head)):
            for i, layer in enumerate(layers):
                if layer.kind == "linear":
                    if layer.in_features != width:
                        raise ValueError(
                            f"{where} layer {i} ({layer.describe()}) expects width "
                            f"{layer.in_features} but receives {width}")
                    width = layer.out_features
        kinds = [layer.kind for layer in self.generator + self.head]
        if kinds[-1] != "softmax" or kinds.count("softmax") != 1:
            raise ValueError("the head must end in the only softmax layer")
        return self

    @property
    def latent_dim(self) -> int:
        return _output_width(self.generator, self.input_dim)

    @property
    def num_classes(self) -> int:
        return _output_width(self.head, self.latent_dim)

    def param_shapes(self, partition: str) -> List[Tuple[int, ...]]:
        """Shapes of the parameter arrays of a partition, [W1, b1, W2, b2, ...]."""
        shapes = []
        for layer in self.layers(partition):
            if layer.kind == "linear":
                shapes.append((layer.in_features, layer.out_features))
                shapes.append((layer.out_features,))
        return shapes

    def layers(self, partition: str) -> List[LayerSpec]:
        if partition not in PARTITIONS:
            raise InputError(f"Unknown partition '{partition}'")
        return self.generator if partition == "generator" else self.head

    @classmethod
    def reference(cls, input_dim: int, num_classes: int,
                  hidden: Sequence[int] = (64, 32), dropout: float = 0.0) -> "ArchitectureSpec":
        """Desk-scale network: FC+ReLU generator blocks, one FC+Softmax head."""
        generator = []
        width = input_dim
        for units in hidden:
            generator.append(LayerSpec(kind="linear", in_features=width, out_features=units))
            generator.append(LayerSpec(kind="relu"))
            width = units
        head = []
        if dropout > 0:
            head.append(LayerSpec(kind="dropout", rate=dropout))
        head.append(LayerSpec(kind="linear", in_features=width, out_features=num_classes))
        head.append(LayerSpec(kind="softmax"))
        return cls(input_dim=input_dim, generator=generator, head=head)


def _output_width(layers: Iterable[LayerSpec], width: int) -> int:
    for layer in layers:
        if layer.kind == "linear":
            width = layer.out_features
    return width


def _as_arrays(arrays: Iterable) -> List[np.ndarray]:
    return [np.asarray(a, dtype=np.float64) for a in arrays]


class ModelParams:
    """Parameters of one model, split into the generator G and the head F."""

    def __init__(self, spec: ArchitectureSpec, generator: Sequence, head: Sequence):
        self.spec = spec
        self.generator = _as_arrays(generator)
        self.head = _as_arrays(head)
        for name in PARTITIONS:
            expected = spec.param_shapes(name)
            got = [a.shape for a in self.partition(name)]
            if got != expected:
                raise DimensionError(f"{name} parameters have shapes {got}, layer spec needs {expected}")

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, rng: np.random.Generator) -> "ModelParams":
        """Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        partitions = {}
        for name in PARTITIONS:
            arrays = []
            for shape in spec.param_shapes(name):
                if len(shape) == 2:
                    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                    arrays.append(rng.uniform(-bound, bound, size=shape))
                else:
                    arrays.append(np.zeros(shape))
            partitions[name] = arrays
        return cls(spec, partitions["generator"], partitions["head"])

    @classmethod
    def zeros(cls, spec: ArchitectureSpec) -> "ModelParams":
        return cls(spec,
                   [np.zeros(s) for s in spec.param_shapes("generator")],
                   [np.zeros(s) for s in spec.param_shapes("head")])

    def partition(self, name: str) -> List[np.ndarray]:
        if name == "generator":
            return self.generator
        if name == "head":
            return self.head
        raise InputError(f"Unknown partition '{name}'")

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, [a.copy() for a in self.generator], [a.copy() for a in self.head])

    def replace(self, generator: Optional[Sequence] = None, head: Optional[Sequence] = None) -> "ModelParams":
        """New params sharing the arrays of every partition not replaced."""
        return ModelParams(self.spec,
                           self.generator if generator is None else generator,
                           self.head if head is None else head)

    def check_compatible(self, other: "ModelParams") -> None:
        if self.spec != other.spec:
            raise ProtocolError("Layer specs differ; parameters cannot be exchanged")

    def digest(self, partition: Optional[str] = None) -> str:
        """SHA-256 over shapes and raw bytes of one or both partitions."""
        h = hashlib.sha256()
        for name in ([partition] if partition else PARTITIONS):
            for a in self.partition(name):
                h.update(repr(a.shape).encode())
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def bitwise_equal(self, other: "ModelParams") -> bool:
        return self.spec == other.spec and self.digest() == other.digest()

    def flat(self, partition: Optional[str] = None) -> np.ndarray:
        arrays = [a.ravel() for name in ([partition] if partition else PARTITIONS) for a in self.partition(name)]
        return np.concatenate(arrays) if arrays else np.zeros(0)

    @property
    def num_params(self) -> int:
        return int(sum(a.size for name in PARTITIONS for a in self.partition(name)))

    def __repr__(self):
        return f"ModelParams(params={self.num_params}, digest={self.digest()[:12]})"


class Gradients:
    """Gradient arrays with the partition structure of ModelParams."""

    def __init__(self, generator: Sequence[np.ndarray], head: Sequence[np.ndarray]):
        self.generator = list(generator)
        self.head = list(head)

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "Gradients":
        return cls([np.zeros_like(a) for a in params.generator], [np.zeros_like(a) for a in params.head])

    def partition(self, name: str) -> List[np.ndarray]:
        if name == "generator":
            return self.generator
        if name == "head":
            return self.head
        raise InputError(f"Unknown partition '{name}'")

    def all_finite(self, partitions: Iterable[str] = PARTITIONS) -> bool:
        return all(np.all(np.isfinite(g)) for name in partitions for g in self.partition(name))

    def flat(self, partition: Optional[str] = None) -> np.ndarray:
        arrays = [g.ravel() for name in ([partition] if partition else PARTITIONS) for g in self.partition(name)]
        return np.concatenate(arrays) if arrays else np.zeros(0)


class GradientTarget(BaseModel):
    """Which loss to differentiate and which partitions receive gradients."""
    loss: Literal["cross_entropy", "idd"] = "cross_entropy"
    partitions: FrozenSet[Literal["generator", "head"]] = frozenset(PARTITIONS)

    model_config = ConfigDict(extra="forbid", frozen=True)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, clipped into the open interval (0, 1).

    Large logit gaps would otherwise underflow to exactly 0 and round the
    winner to exactly 1. Clipping shifts a row sum by at most 2**-53.
    """
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    return np.clip(e / np.sum(e, axis=1, keepdims=True), PROB_FLOOR, PROB_CEIL)


def forward_layers(layers: Sequence[LayerSpec], arrays: Sequence[np.ndarray], x: np.ndarray,
                   mode: str = "eval", rng: Optional[np.random.Generator] = None,
                   where: str = "generator") -> Tuple[np.ndarray, list]:
    """Run a layer stack, returning the output and one cache entry per layer."""
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got '{mode}'")
    caches = []
    out = x
    idx = 0
    for i, layer in enumerate(layers):
        if layer.kind == "linear":
            weight, bias = arrays[idx], arrays[idx + 1]
            idx += 2
            if out.ndim != 2 or out.shape[1] != weight.shape[0]:
                raise DimensionError(
                    f"{where} layer {i} ({layer.describe()}) expects {weight.shape[0]} input "
                    f"features, got array of shape {out.shape}")
            caches.append(out)
            out = out @ weight + bias
        elif layer.kind == "relu":
            mask = out > 0
            caches.append(mask)
            out = np.where(mask, out, 0.0)
        elif layer.kind == "dropout":
            if mode == "train" and layer.rate > 0:
                if rng is None:
                    raise InputError(f"{where} layer {i} ({layer.describe()}) needs an rng in train mode")
                keep = 1.0 - layer.rate
                scale = (rng.random(out.shape) < keep) / keep
                caches.append(scale)
                out = out * scale
            else:
                caches.append(None)
        else:
            out = softmax(out)
            caches.append(out)
    return out, caches


def backward_layers(layers: Sequence[LayerSpec], arrays: Sequence[np.ndarray], caches: list,
                    grad: np.ndarray, param_grads: bool = True,
                    from_logits: bool = False) -> Tuple[np.ndarray, List[Optional[np.ndarray]]]:
    """Reverse pass through a layer stack.

    With ``from_logits`` the incoming gradient is taken w.r.t. the input of the
    terminal softmax and that layer is skipped.
    """
    grads: List[Optional[np.ndarray]] = [None] * len(arrays)
    idx = len(arrays)
    start = len(layers) - 1 if from_logits else len(layers)
    for i in reversed(range(start)):
        layer = layers[i]
        cache = caches[i]
        if layer.kind == "linear":
            idx -= 2
            if param_grads:
                grads[idx] = cache.T @ grad
                grads[idx + 1] = np.sum(grad, axis=0)
            grad = grad @ arrays[idx].T
        elif layer.kind == "relu":
            grad = np.where(cache, grad, 0.0)
        elif layer.kind == "dropout":
            if cache is not None:
                grad = grad * cache
        else:
            grad = cache * (grad - np.sum(grad * cache, axis=1, keepdims=True))
    return grad, grads


def _check_input(spec: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        first = spec.generator[0].describe()
        raise DimensionError(
            f"generator layer 0 ({first}) expects batches of shape (N, {spec.input_dim}), got {x.shape}")
    return x


def forward(params: ModelParams, x: np.ndarray, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Compute the latent representation G(x) and class probabilities F(G(x))."""
    x = _check_input(params.spec, x)
    latent, _ = forward_layers(params.spec.generator, params.generator, x, mode, rng, "generator")
    probs, _ = forward_layers(params.spec.head, params.head, latent, mode, rng, "head")
    return latent, probs


def value_and_grad(params: ModelParams, x: np.ndarray, target: GradientTarget,
                   labels: Optional[np.ndarray] = None, second_head: Optional[Sequence[np.ndarray]] = None,
                   mode: str = "eval", rng: Optional[np.random.Generator] = None) -> Tuple[float, Gradients]:
    """Loss value and gradients of the selected loss for the selected partitions.

    Cross-entropy needs ``labels``. The IDD loss compares the head in ``params``
    with ``second_head`` on the shared latent representation; both heads run in
    eval mode.
    """
    spec = params.spec
    x = _check_input(spec, x)
    want_generator = "generator" in target.partitions
    want_head = "head" in target.partitions
    result = Gradients.zeros_like(params)

    latent, gen_caches = forward_layers(spec.generator, params.generator, x, mode, rng, "generator")
    if target.loss == "cross_entropy":
        if labels is None:
            raise InputError("cross-entropy gradients need labels")
        probs, head_caches = forward_layers(spec.head, params.head, latent, mode, rng, "head")
        loss = cross_entropy(probs, labels)
        dlogits = cross_entropy_logit_grad(probs, labels)
        dlatent, head_grads = backward_layers(spec.head, params.head, head_caches, dlogits,
                                              param_grads=want_head, from_logits=True)
    else:
        if second_head is None:
            raise InputError("IDD gradients need a second head")
        second = _as_arrays(second_head)
        if [a.shape for a in second] != spec.param_shapes("head"):
            raise DimensionError("second head does not match the layer spec")
        probs1, caches1 = forward_layers(spec.head, params.head, latent, "eval", None, "head")
        probs2, caches2 = forward_layers(spec.head, second, latent, "eval", None, "second head")
        loss = idd_loss(probs1, probs2)
        dprobs = idd_prob_grad(probs1, probs2)
        dlatent, head_grads = backward_layers(spec.head, params.head, caches1, dprobs, param_grads=want_head)
        if want_generator:
            dlatent2, _ = backward_layers(spec.head, second, caches2, -dprobs, param_grads=False)
            dlatent = dlatent + dlatent2

    if want_head:
        result.head = head_grads
    if want_generator:
        _, gen_grads = backward_layers(spec.generator, params.generator, gen_caches, dlatent)
        result.generator = gen_grads
    return loss, result


def backward(params: ModelParams, x: np.ndarray, target: GradientTarget,
             labels: Optional[np.ndarray] = None, second_head: Optional[Sequence[np.ndarray]] = None,
             mode: str = "eval", rng: Optional[np.random.Generator] = None) -> Gradients:
    """Gradients of the selected loss; partitions outside the target are exact zeros."""
    return value_and_grad(params, x, target, labels, second_head, mode, rng)[1]
