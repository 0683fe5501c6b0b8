"""The jointly trained recommender network.

Two parallel MLP towers map a user's and an item's raw rating vectors to
dense feature vectors; the features are fused (concatenation or elementwise
product) and pushed through an interaction MLP whose output is reduced by a
learned weight vector and squashed through a sigmoid. Both towers, the
interaction stack, and the output weights train together from a single
prediction error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import RatingMatrix
from .errors import ConfigError, FormatError, ShapeError
from .nn import DenseLayer, Parameter, make_dense_layer, sigmoid, stack_backward, stack_forward

FUSION_MODES = ("concat", "multiply")
FEEDBACK_MODES = ("explicit", "implicit")

CHECKPOINT_MAGIC = b"JRECCKPT"
CHECKPOINT_VERSION = 1

DEFAULT_TOWER_LAYERS = [256, 128, 64]
DEFAULT_INTERACTION_LAYERS = [128, 8]


def halved_layer_sizes(top_width: int, depth: int) -> list[int]:
    """Layer widths for depth sweeps: halve per layer from ``top_width``."""
    if depth < 1 or top_width < 1:
        raise ConfigError("depth and top width must be >= 1")
    return [max(1, top_width // (2**k)) for k in range(depth)]


@dataclass
class ModelConfig:
    """Network geometry and input encoding."""

    user_layers: list[int] = field(default_factory=lambda: list(DEFAULT_TOWER_LAYERS))
    item_layers: list[int] = field(default_factory=lambda: list(DEFAULT_TOWER_LAYERS))
    interaction_layers: list[int] = field(default_factory=lambda: list(DEFAULT_INTERACTION_LAYERS))
    fusion: str = "concat"
    feedback: str = "explicit"

    def validate(self):
        for name, sizes in (("user_layers", self.user_layers), ("item_layers", self.item_layers)):
            if not sizes or any(w < 1 for w in sizes):
                raise ConfigError(f"model.{name} must be a nonempty list of widths >= 1, got {sizes}")
        if any(w < 1 for w in self.interaction_layers):
            raise ConfigError(f"model.interaction_layers widths must be >= 1, got {self.interaction_layers}")
        if self.user_layers[-1] != self.item_layers[-1]:
            raise ConfigError(
                f"tower output widths differ (user_layers ends at {self.user_layers[-1]}, "
                f"item_layers at {self.item_layers[-1]}); fusion requires equal widths"
            )
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"model.fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.feedback not in FEEDBACK_MODES:
            raise ConfigError(f"model.feedback must be one of {FEEDBACK_MODES}, got {self.feedback!r}")
        return self

    @property
    def feature_width(self) -> int:
        return self.user_layers[-1]

    @property
    def fused_width(self) -> int:
        return 2 * self.feature_width if self.fusion == "concat" else self.feature_width

    @property
    def output_width(self) -> int:
        return self.interaction_layers[-1] if self.interaction_layers else self.fused_width


def fuse(z_user: np.ndarray, z_item: np.ndarray, mode: str) -> np.ndarray:
    """Combine tower outputs: stack them (concat) or multiply elementwise."""
    if z_user.shape != z_item.shape:
        raise ShapeError(f"fusion requires equal widths, got {z_user.shape} and {z_item.shape}")
    if mode == "concat":
        return np.concatenate([z_user, z_item], axis=-1)
    if mode == "multiply":
        return z_user * z_item
    raise ConfigError(f"unknown fusion mode {mode!r}")


def unfuse_grad(grad_fused: np.ndarray, z_user, z_item, mode: str):
    """Split d(loss)/d(fused) back into tower-output gradients."""
    if mode == "concat":
        d = grad_fused.shape[-1] // 2
        return grad_fused[..., :d], grad_fused[..., d:]
    return grad_fused * z_item, grad_fused * z_user


class JointModel:
    """Parameters and forward passes of the joint network."""

    def __init__(self, num_users: int, num_items: int, config: ModelConfig,
                 user_tower, item_tower, interaction_stack, output_weights: Parameter):
        config.validate()
        self.num_users = num_users
        self.num_items = num_items
        self.config = config
        self.user_tower: list[DenseLayer] = user_tower
        self.item_tower: list[DenseLayer] = item_tower
        self.interaction_stack: list[DenseLayer] = interaction_stack
        self.output_weights = output_weights
        if output_weights.value.shape != (config.output_width,):
            raise ShapeError(
                f"output weights of shape {output_weights.value.shape} do not match "
                f"final interaction width ({config.output_width},)"
            )
        self._head_cache = None

    @classmethod
    def initialize(cls, num_users: int, num_items: int, config: ModelConfig, seed: int) -> "JointModel":
        """All weights drawn N(0, 0.01^2) from one seeded stream; biases zero.

        Draw order is fixed (user tower, item tower, interaction stack,
        output weights) so the same seed always yields identical parameters.
        """
        config.validate()
        rng = np.random.default_rng(seed)

        def build_stack(prefix, in_dim, sizes):
            layers = []
            for depth, width in enumerate(sizes):
                layers.append(make_dense_layer(rng, in_dim, width, "relu", f"{prefix}.{depth}"))
                in_dim = width
            return layers

        user_tower = build_stack("user_tower", num_items, config.user_layers)
        item_tower = build_stack("item_tower", num_users, config.item_layers)
        interaction = build_stack("interaction", config.fused_width, config.interaction_layers)
        h = Parameter("output_weights", rng.normal(0.0, 0.01, size=config.output_width))
        return cls(num_users, num_items, config, user_tower, item_tower, interaction, h)

    def parameters(self) -> list[Parameter]:
        params = []
        for layer in (*self.user_tower, *self.item_tower, *self.interaction_stack):
            params.extend(layer.parameters())
        params.append(self.output_weights)
        return params

    def parameter_groups(self):
        """Named groups for joint-gradient diagnostics."""
        return {
            "user_tower": [p for l in self.user_tower for p in l.parameters()],
            "item_tower": [p for l in self.item_tower for p in l.parameters()],
            "interaction_stack": [p for l in self.interaction_stack for p in l.parameters()],
            "output_weights": [self.output_weights],
        }

    # ---- forward / backward -------------------------------------------------

    def user_features(self, inputs, record: bool = False) -> np.ndarray:
        return stack_forward(self.user_tower, inputs, record=record)

    def item_features(self, inputs, record: bool = False) -> np.ndarray:
        return stack_forward(self.item_tower, inputs, record=record)

    def interaction_forward(self, fused: np.ndarray, record: bool = False) -> np.ndarray:
        """Scores in (0, 1), one per fused feature row."""
        fused = np.atleast_2d(np.asarray(fused, dtype=np.float64))
        z = stack_forward(self.interaction_stack, fused, record=record)
        scores = sigmoid(z @ self.output_weights.value)
        if record:
            self._head_cache = (z, scores)
        return scores

    def interaction_backward(self, grad_scores: np.ndarray) -> np.ndarray:
        """Backprop d(loss)/d(score) to the fused input; accumulates gradients."""
        if self._head_cache is None:
            from .errors import StateError

            raise StateError("interaction_backward called with no recorded forward pass")
        z, scores = self._head_cache
        self._head_cache = None
        grad_logit = np.asarray(grad_scores, dtype=np.float64) * scores * (1.0 - scores)
        self.output_weights.grad += grad_logit @ z
        grad_z = np.outer(grad_logit, self.output_weights.value)
        return stack_backward(self.interaction_stack, grad_z)

    def all_item_features(self, train: RatingMatrix) -> np.ndarray:
        """Frozen item-tower output for every item, as an (N, d) matrix."""
        return self.item_features(train.item_input_matrix(self.config.feedback), record=False)

    def prepare_scorer(self, train: RatingMatrix):
        """Frozen per-user candidate scorer with item features precomputed."""
        item_feats = self.all_item_features(train)
        user_inputs = train.user_input_matrix(self.config.feedback)

        def score(u: int, item_ids: np.ndarray) -> np.ndarray:
            z_u = self.user_features(user_inputs[[u]], record=False)[0]
            z_items = item_feats[np.asarray(item_ids)]
            fused = fuse(np.broadcast_to(z_u, z_items.shape), z_items, self.config.fusion)
            return self.interaction_forward(fused, record=False)

        return score

    def predict(self, train: RatingMatrix, u: int, i: int) -> float:
        """Predicted preference score in (0, 1) for one (user, item) pair."""
        if not 0 <= u < self.num_users:
            raise IndexError(f"user id {u} out of range [0, {self.num_users})")
        if not 0 <= i < self.num_items:
            raise IndexError(f"item id {i} out of range [0, {self.num_items})")
        z_u = self.user_features(train.user_input_matrix(self.config.feedback)[[u]], record=False)
        z_i = self.item_features(train.item_input_matrix(self.config.feedback)[[i]], record=False)
        fused = fuse(z_u, z_i, self.config.fusion)
        return float(self.interaction_forward(fused, record=False)[0])

    # ---- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Little-endian binary checkpoint: magic, version, config, raw arrays."""
        config_doc = json.dumps(
            {
                "num_users": self.num_users,
                "num_items": self.num_items,
                "user_layers": self.config.user_layers,
                "item_layers": self.config.item_layers,
                "interaction_layers": self.config.interaction_layers,
                "fusion": self.config.fusion,
                "feedback": self.config.feedback,
            },
            sort_keys=True,
        ).encode("utf-8")
        with open(path, "wb") as handle:
            handle.write(CHECKPOINT_MAGIC)
            handle.write(struct.pack("<I", CHECKPOINT_VERSION))
            handle.write(struct.pack("<I", len(config_doc)))
            handle.write(config_doc)
            params = self.parameters()
            handle.write(struct.pack("<I", len(params)))
            for p in params:
                name = p.name.encode("utf-8")
                handle.write(struct.pack("<H", len(name)))
                handle.write(name)
                handle.write(struct.pack("<B", p.value.ndim))
                for dim in p.value.shape:
                    handle.write(struct.pack("<I", dim))
                handle.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "JointModel":
        try:
            with open(path, "rb") as handle:
                blob = handle.read()
        except OSError as exc:
            raise FormatError(f"cannot open checkpoint {path}: {exc}") from exc
        try:
            return cls._parse_checkpoint(blob)
        except (struct.error, IndexError, KeyError, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: truncated or malformed checkpoint ({exc})") from exc

    @classmethod
    def _parse_checkpoint(cls, blob: bytes) -> "JointModel":
        if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        off = len(CHECKPOINT_MAGIC)

        def take(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(blob):
                raise struct.error("unexpected end of file")
            vals = struct.unpack_from(fmt, blob, off)
            off += size
            return vals[0] if len(vals) == 1 else vals

        version = take("<I")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        config_len = take("<I")
        doc = json.loads(blob[off : off + config_len].decode("utf-8"))
        off += config_len
        config = ModelConfig(
            user_layers=list(doc["user_layers"]),
            item_layers=list(doc["item_layers"]),
            interaction_layers=list(doc["interaction_layers"]),
            fusion=doc["fusion"],
            feedback=doc["feedback"],
        )
        arrays = {}
        n_params = take("<I")
        for _ in range(n_params):
            name_len = take("<H")
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            ndim = take("<B")
            shape = tuple(take("<I") for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            size = count * 8
            if off + size > len(blob):
                raise struct.error("unexpected end of file in parameter data")
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += size

        model = cls.initialize(int(doc["num_users"]), int(doc["num_items"]), config, seed=0)
        for p in model.parameters():
            if p.name not in arrays:
                raise FormatError(f"checkpoint missing parameter {p.name!r}")
            if arrays[p.name].shape != p.value.shape:
                raise FormatError(
                    f"checkpoint parameter {p.name!r} has shape {arrays[p.name].shape}, "
                    f"expected {p.value.shape}"
                )
            p.value[...] = arrays[p.name]
        return model

    def copy_parameter_values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def restore_parameter_values(self, snapshot: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value[...] = snapshot[p.name]
