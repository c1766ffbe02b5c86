"""The parallel-dilated network: two conv branches, additive fusion, FC head."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import layers as L
from .errors import BuildError, DomainError, NumericError, ShapeError, TapeError
from .layers import ConvSpec, GradTape, LayerParams
from .tensor import DTYPE, Tensor

CLASS_NAMES = ("COVID-19", "Normal", "Viral Pneumonia")


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 224
    in_channels: int = 3
    dilations: tuple = (1, 2)
    filters: tuple = (64, 128, 256, 512, 512)
    fc: tuple = (1024, 1024)
    dropout: float = 0.3
    classes: int = 3
    kernel: int = 3

    def __post_init__(self):
        for name in ("dilations", "filters", "fc"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def final_extent(self) -> int:
        return self.input_size >> len(self.filters)

    @property
    def flatten_width(self) -> int:
        return self.filters[-1] * self.final_extent**2


@dataclass
class Layer:
    name: str
    kind: str
    out_shape: tuple  # per sample
    spec: Optional[ConvSpec] = None
    params: Optional[LayerParams] = None
    rate: float = 0.0


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _conv_layer(name, spec, extent, rng):
    fan_in = spec.in_channels * spec.kernel**2
    w = _he_uniform(rng, (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel), fan_in)
    params = LayerParams(w, np.zeros(spec.out_channels))
    out = spec.output_extent(extent)
    return Layer(name, "conv", (spec.out_channels, out, out), spec=spec, params=params)


def _fc_layer(name, n_in, n_out, rng):
    params = LayerParams(_he_uniform(rng, (n_in, n_out), n_in), np.zeros(n_out))
    return Layer(name, "fc", (n_out,), params=params)


def branch_prefix(index: int, dilation: int) -> str:
    return f"branch{index}_d{dilation}"


class ModelGraph:
    """Layer sequences for each branch plus the shared head.

    Tape layout for one forward pass: every layer of branch 0, every layer
    of branch 1, ..., one ``fuse.add`` record, then the head up to the
    logits. Softmax is applied outside the tape because backward starts
    from logit gradients.
    """

    def __init__(self, config: ModelConfig, branches: list[list[Layer]], head: list[Layer],
                 class_names: Sequence[str]):
        self.config = config
        self.branches = branches
        self.head = head
        self.class_names = list(class_names)
        self._token = object()

    # -- parameters --------------------------------------------------------

    def layers(self):
        for branch in self.branches:
            yield from branch
        yield from self.head

    def parameters(self) -> dict[str, LayerParams]:
        return {layer.name: layer.params for layer in self.layers() if layer.params is not None}

    def named_arrays(self) -> dict[str, Tensor]:
        out = {}
        for name, p in self.parameters().items():
            out[f"{name}.weight"] = p.weight
            out[f"{name}.bias"] = p.bias
        return out

    def num_parameters(self) -> int:
        return sum(a.size for a in self.named_arrays().values())

    # -- forward -----------------------------------------------------------

    def _check_input(self, image: Tensor) -> Tensor:
        image = np.asarray(image, dtype=DTYPE)
        cfg = self.config
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if image.shape[-3:] != expected or image.ndim not in (3, 4):
            raise ShapeError(f"expected image of shape {expected} (optionally batched), got {image.shape}")
        return image

    def _run(self, layer: Layer, x, tape, mode, rng):
        if layer.kind == "conv":
            out = L.conv2d_forward(x, layer.params, layer.spec, tape, layer.name)
        elif layer.kind == "relu":
            out = L.relu_forward(x, tape, layer.name)
        elif layer.kind == "pool":
            out = L.maxpool_forward(x, tape, layer.name)
        elif layer.kind == "flatten":
            out = L.flatten_forward(x, tape, layer.name)
        elif layer.kind == "fc":
            out = L.fc_forward(x, layer.params, tape, layer.name)
        elif layer.kind == "dropout":
            out = L.dropout_forward(x, layer.rate, mode, rng, tape, layer.name)
        else:
            raise BuildError(f"unknown layer kind {layer.kind!r}")
        if layer.kind in ("conv", "fc") and not np.isfinite(out).all():
            raise NumericError(f"non-finite activation in layer {layer.name}")
        return out

    def logits(self, image: Tensor, mode: str = "infer", rng: Optional[np.random.Generator] = None,
               tape: Optional[GradTape] = None) -> Tensor:
        x = self._check_input(image)
        fused = None
        for branch in self.branches:
            h = x
            for layer in branch:
                h = self._run(layer, h, tape, mode, rng)
            fused = h if fused is None else fused + h
        if tape is not None:
            tape.push("fuse.add", "add", fused.shape, n=len(self.branches))
        h = fused
        for layer in self.head:
            h = self._run(layer, h, tape, mode, rng)
            if layer.name == "head.relu" and tape is not None:
                tape.extras["features"] = h
        return h

    def forward(self, image: Tensor, mode: str = "infer",
                rng: Optional[np.random.Generator] = None) -> tuple[Tensor, GradTape]:
        """Class probabilities for one image (``C x H x W``) or a batch, plus the tape."""
        tape = GradTape(owner=self._token)
        z = self.logits(image, mode, rng, tape)
        tape.extras["logits"] = z
        return L.softmax(z), tape

    def predict_proba(self, images: Tensor, batch_size: int = 32) -> Tensor:
        """Infer-mode probabilities without recording a tape."""
        images = self._check_input(images)
        if images.ndim == 3:
            return L.softmax(self.logits(images))
        chunks = [L.softmax(self.logits(images[i : i + batch_size])) for i in range(0, len(images), batch_size)]
        return np.concatenate(chunks, axis=0)

    # -- backward ----------------------------------------------------------

    def _check_tape(self, tape: GradTape):
        if tape.owner is not self._token:
            raise TapeError("tape was recorded by a different model")
        if tape._cursor is not None:
            raise TapeError("tape has already been replayed")

    def _back(self, layer: Layer, tape: GradTape, g: Tensor, grads: dict) -> Tensor:
        rec = tape.pop(layer.name)
        if layer.kind in ("conv", "fc"):
            g, gw, gb = L.BACKWARD[layer.kind](g, rec)
            grads[layer.name] = (gw, gb)
            return g
        return L.BACKWARD[layer.kind](g, rec)

    def backward(self, tape: GradTape, grad_logits: Tensor) -> dict[str, tuple[Tensor, Tensor]]:
        """Parameter gradients ``{layer: (grad_weight, grad_bias)}`` from logit gradients."""
        self._check_tape(tape)
        g = np.asarray(grad_logits, dtype=DTYPE)
        grads: dict[str, tuple[Tensor, Tensor]] = {}
        for layer in reversed(self.head):
            g = self._back(layer, tape, g, grads)
        tape.pop("fuse.add")
        # adjoint of addition: every branch receives the same gradient
        for branch in reversed(self.branches):
            gb = g
            for layer in reversed(branch):
                gb = self._back(layer, tape, gb, grads)
        if not tape.exhausted:
            raise TapeError("tape holds records not produced by this model")
        return grads

    def activations_and_gradients(self, image: Tensor, class_index: int,
                                  score: str = "prob") -> tuple[Tensor, Tensor, float]:
        """Final-conv activations ``A``, ``dY/dA`` and the class score ``Y``.

        ``score="prob"`` uses the softmax probability of ``class_index``;
        ``score="logit"`` uses its pre-softmax logit. Dropout runs in infer mode.
        """
        if not 0 <= class_index < self.config.classes:
            raise DomainError(f"class index {class_index} out of range [0, {self.config.classes})")
        image = self._check_input(image)
        if image.ndim != 3:
            raise ShapeError("activations_and_gradients takes a single image")
        probs, tape = self.forward(image, mode="infer")
        onehot = np.zeros(self.config.classes)
        onehot[class_index] = 1.0
        if score == "prob":
            y = float(probs[class_index])
            g = y * (onehot - probs)
        elif score == "logit":
            y = float(tape.extras["logits"][class_index])
            g = onehot
        else:
            raise DomainError(f"unknown score {score!r}")
        grads: dict = {}
        for layer in reversed(self.head):
            g = self._back(layer, tape, g, grads)
            if layer.name == "head.flatten":
                break
        return tape.extras["features"], g, y


def build_pdcovidnet(config: ModelConfig = ModelConfig(), rng=None,
                     class_names: Optional[Sequence[str]] = None) -> ModelGraph:
    """Construct the network for ``config`` with He-uniform weights and zero biases."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cfg = config
    if not cfg.dilations:
        raise BuildError("at least one branch dilation is required")
    if not cfg.filters or cfg.input_size < 1 or cfg.input_size % (1 << len(cfg.filters)):
        raise BuildError(f"input size {cfg.input_size} cannot be halved {len(cfg.filters)} times")
    if cfg.classes < 2 or cfg.in_channels < 1:
        raise BuildError("need at least 2 classes and 1 input channel")
    if not 0.0 <= cfg.dropout < 1.0:
        raise BuildError("dropout rate must lie in [0, 1)")
    if class_names is None:
        class_names = CLASS_NAMES if cfg.classes == 3 else [f"class_{i}" for i in range(cfg.classes)]
    if len(class_names) != cfg.classes:
        raise BuildError("class_names length differs from class count")

    branches = []
    for b, d in enumerate(cfg.dilations):
        prefix = branch_prefix(b, d)
        seq: list[Layer] = []
        channels, extent = cfg.in_channels, cfg.input_size
        for i, n_filters in enumerate(cfg.filters, start=1):
            for j in (1, 2):
                spec = ConvSpec(channels, n_filters, cfg.kernel, 1, d)
                conv = _conv_layer(f"{prefix}.block{i}.conv{j}", spec, extent, rng)
                if conv.out_shape[1] != extent:
                    raise BuildError(f"{conv.name} changes spatial size")
                seq.append(conv)
                seq.append(Layer(f"{prefix}.block{i}.relu{j}", "relu", conv.out_shape))
                channels = n_filters
            extent = L.output_extent(extent, 0, 2, 2)
            seq.append(Layer(f"{prefix}.block{i}.pool", "pool", (channels, extent, extent)))
        branches.append(seq)

    shapes = {br[-1].out_shape for br in branches}
    if len(shapes) != 1:
        raise BuildError(f"branch outputs differ: {shapes}")
    c, e, _ = shapes.pop()

    head: list[Layer] = []
    head.append(_conv_layer("head.conv", ConvSpec(c, c, cfg.kernel, 1, 1), e, rng))
    head.append(Layer("head.relu", "relu", (c, e, e)))
    width = c * e * e
    head.append(Layer("head.flatten", "flatten", (width,)))
    for i, units in enumerate(cfg.fc, start=1):
        head.append(_fc_layer(f"head.fc{i}", width, units, rng))
        head.append(Layer(f"head.fc{i}_relu", "relu", (units,)))
        head.append(Layer(f"head.dropout{i}", "dropout", (units,), rate=cfg.dropout))
        width = units
    head.append(_fc_layer("head.logits", width, cfg.classes, rng))
    return ModelGraph(cfg, branches, head, class_names)


def config_from_arrays(arrays: dict[str, Tensor], dropout: float = 0.3) -> ModelConfig:
    """Recover the architecture from parameter names and shapes (e.g. a weight file)."""
    branch_re = re.compile(r"^branch(\d+)_d(\d+)\.block(\d+)\.conv1\.weight$")
    dil: dict[int, int] = {}
    filters: dict[int, int] = {}
    in_channels = None
    for name, arr in arrays.items():
        m = branch_re.match(name)
        if m:
            b, d, blk = map(int, m.groups())
            dil[b] = d
            filters[blk] = arr.shape[0]
            if blk == 1:
                in_channels = arr.shape[1]
    fc = []
    i = 1
    while f"head.fc{i}.weight" in arrays:
        fc.append(arrays[f"head.fc{i}.weight"].shape[1])
        i += 1
    if not dil or not filters or "head.logits.weight" not in arrays:
        raise BuildError("parameter set does not describe a parallel-dilated network")
    first_fc = arrays["head.fc1.weight"] if fc else arrays["head.logits.weight"]
    n_blocks = len(filters)
    extent = int(round(np.sqrt(first_fc.shape[0] / filters[n_blocks])))
    return ModelConfig(
        input_size=extent << n_blocks,
        in_channels=int(in_channels),
        dilations=tuple(dil[b] for b in sorted(dil)),
        filters=tuple(filters[k] for k in sorted(filters)),
        fc=tuple(fc),
        dropout=dropout,
        classes=arrays["head.logits.weight"].shape[1],
    )
