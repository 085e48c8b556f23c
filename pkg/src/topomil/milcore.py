"""MIL model pieces: instance encoder, bag pooling, classifier heads and losses.

Pooling kinds
-------------
``max``        coordinatewise maximum over instances
``mean``       arithmetic mean over instances
``attention``  softmax-weighted sum with weights ``softmax_i(W tanh(V z_i))``
``rgp``        regressor-guided pooling; the two-class regressor ``(W, B)``
               scores each instance, scores are standardised within the bag
               and soft-maxed into pooling weights, and the same ``(W, B)``
               then classifies the pooled vector
``anomaly``    ``sum_i (w_d * d_i + w_a * a_i) z_i`` with ``d_i`` the
               Mahalanobis distance of ``z_i`` from a Gaussian fitted to
               negative-bag latents and ``a_i`` attention weights
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import autodiff as ad
from .autodiff import Node, Parameter
from .toporeg import InputTopology, TopoLossBreakdown, topo_loss

__all__ = [
    "AGGREGATORS",
    "ACTIVATIONS",
    "EncoderConfig",
    "ModelConfig",
    "NegativeGaussian",
    "BagOutput",
    "Losses",
    "MILModel",
    "encode",
    "aggregate_max",
    "aggregate_mean",
    "aggregate_attention",
    "rgp_weights",
    "aggregate_rgp",
    "fit_negative_gaussian",
    "mahalanobis",
    "aggregate_anomaly",
    "classify",
    "compute_losses",
    "total_loss",
    "save_checkpoint",
    "load_checkpoint",
]

AGGREGATORS = ("max", "mean", "attention", "rgp", "anomaly")
ACTIVATIONS = ("relu", "tanh", "none")
RGP_VAR_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"TOPOMIL-CKPT"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    sizes: list[int]
    activations: list[str]

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        self.activations = list(self.activations)
        if len(self.sizes) < 2:
            raise ValueError("encoder needs an input width and at least one layer width")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError(f"{len(self.sizes) - 1} layers but {len(self.activations)} activations")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}; choose from {ACTIVATIONS}")
        if min(self.sizes) < 1:
            raise ValueError("layer widths must be positive")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.sizes[-1]


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    aggregator: str = "rgp"
    n_classes: int = 2
    attention_hidden: int = 128
    dual_head: bool = False
    ridge: float = 1e-3

    def __post_init__(self):
        if isinstance(self.encoder, Mapping):
            self.encoder = EncoderConfig(**self.encoder)
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}; choose from {AGGREGATORS}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.aggregator == "rgp" and self.n_classes != 2:
            raise ValueError("regressor-guided pooling is defined for two classes only")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


# ---------------------------------------------------------------------------
# encoder


def _activate(x: Node, kind: str) -> Node:
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    return x


def _linear(x: Node, w: Node, b: Node) -> Node:
    return ad.add(ad.matmul(x, w), ad.broadcast_rows(b, x.shape[0]))


def encode(config: EncoderConfig, params: Mapping[str, Node], instances) -> Node:
    """Apply the shared MLP encoder to every row of ``instances``."""
    x = instances if isinstance(instances, Node) else Node(np.asarray(instances, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ad.DimensionError(f"encoder expects {config.input_dim} input features, got shape {x.shape}")
    for k, act in enumerate(config.activations):
        x = _activate(_linear(x, params[f"encoder.{k}.weight"], params[f"encoder.{k}.bias"]), act)
    return x


# ---------------------------------------------------------------------------
# pooling


def _nonempty(z: Node) -> int:
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"bag latents must be a non-empty (n, k) matrix, got {z.shape}")
    return z.shape[0]


def _weighted_sum(weights: Node, z: Node) -> Node:
    n, k = z.shape
    return ad.reshape(ad.matmul(ad.reshape(weights, (1, n)), z), (k,))


def aggregate_max(z: Node) -> Node:
    _nonempty(z)
    return ad.reduce_max(z, axis=0)[0]


def aggregate_mean(z: Node) -> Node:
    _nonempty(z)
    return ad.reduce_mean(z, axis=0)


def aggregate_attention(z: Node, w: Node, v: Node) -> tuple[Node, Node]:
    """``w`` is ``1 x h`` and ``v`` is ``h x k``."""
    n = _nonempty(z)
    hidden = ad.tanh(ad.matmul(z, ad.transpose(v)))
    a = ad.softmax(ad.reshape(ad.matmul(hidden, ad.transpose(w)), (n,)))
    return _weighted_sum(a, z), a


def rgp_weights(p: Node) -> Node:
    """Standardise instance scores within the bag and softmax them."""
    centered = ad.sub(p, ad.reduce_mean(p))
    var = ad.reduce_mean(ad.square(centered))
    omega = ad.div(centered, ad.sqrt(ad.add(var, Node(RGP_VAR_FLOOR))))
    return ad.softmax(omega)


def _rgp_scores(z: Node, w: Node, b: Node) -> Node:
    # class 1 is the positive class: p = p+ - p-
    n = z.shape[0]
    return ad.reshape(ad.matmul(_linear(z, w, b), Node([[-1.0], [1.0]])), (n,))


def aggregate_rgp(z: Node, w: Node, b: Node) -> tuple[Node, Node]:
    """``w`` is ``k x 2`` and ``b`` has length 2."""
    _nonempty(z)
    alpha = rgp_weights(_rgp_scores(z, w, b))
    return _weighted_sum(alpha, z), alpha


@dataclass
class NegativeGaussian:
    mean: np.ndarray
    covariance: np.ndarray  # includes the ridge
    precision: np.ndarray
    ridge: float

    @classmethod
    def fit(cls, latents, ridge: float = 1e-3) -> "NegativeGaussian":
        z = np.asarray(latents, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] < 2:
            raise ValueError("need at least two latent vectors to fit a Gaussian")
        mu = z.mean(axis=0)
        cov = np.atleast_2d(np.cov(z, rowvar=False, ddof=1)) + ridge * np.eye(z.shape[1])
        try:
            factor = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError:
            raise ValueError(f"covariance is not positive definite with ridge={ridge}; use a larger ridge") from None
        precision = cho_solve(factor, np.eye(z.shape[1]))
        return cls(mu, cov, 0.5 * (precision + precision.T), float(ridge))

    def mahalanobis(self, z) -> np.ndarray:
        diff = np.asarray(z, dtype=np.float64) - self.mean
        d2 = np.einsum("...i,ij,...j->...", diff, self.precision, diff)
        return np.sqrt(np.maximum(d2, 0.0))


def fit_negative_gaussian(latents, ridge: float = 1e-3) -> NegativeGaussian:
    return NegativeGaussian.fit(latents, ridge)


def mahalanobis(gaussian: NegativeGaussian, z) -> np.ndarray | float:
    return gaussian.mahalanobis(z)


def aggregate_anomaly(
    z: Node, w: Node, v: Node, gaussian: NegativeGaussian | None, w_d: Node, w_a: Node
) -> tuple[Node, Node]:
    """Anomaly-aware pooling.  Mahalanobis scores are constants for the backward pass."""
    if gaussian is None:
        raise RuntimeError("anomaly pooling needs a fitted NegativeGaussian")
    _, a = aggregate_attention(z, w, v)
    d = Node(gaussian.mahalanobis(z.data))
    weights = ad.add(ad.mul(w_d, d), ad.mul(w_a, a))
    return _weighted_sum(weights, z), weights


def classify(zeta: Node, w: Node, b: Node) -> Node:
    k = zeta.shape[0]
    return ad.add(ad.reshape(ad.matmul(ad.reshape(zeta, (1, k)), w), (w.shape[1],)), b)


# ---------------------------------------------------------------------------
# model


@dataclass
class BagOutput:
    latents: Node
    zeta: Node
    logits: Node
    instance_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    instance_logits: Node | None = None


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MILModel:
    """Encoder + pooling + classifier with named parameters in declaration order."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Parameter] = {}
        self.gaussian: NegativeGaussian | None = None
        rng = np.random.default_rng(seed)

        enc = config.encoder
        for k, (fan_in, fan_out) in enumerate(zip(enc.sizes[:-1], enc.sizes[1:])):
            self._register(f"encoder.{k}.weight", _uniform_init(rng, fan_in, (fan_in, fan_out)))
            self._register(f"encoder.{k}.bias", _uniform_init(rng, fan_in, (fan_out,)))

        latent, h, c = enc.latent_dim, config.attention_hidden, config.n_classes
        if config.aggregator in ("attention", "anomaly"):
            self._register("attention.V", _uniform_init(rng, latent, (h, latent)))
            self._register("attention.W", _uniform_init(rng, h, (1, h)))
        if config.aggregator == "anomaly":
            self._register("anomaly.w_d", np.array(0.0))
            self._register("anomaly.w_a", np.array(1.0))
        # for rgp the head doubles as the instance regressor
        self._register("head.weight", _uniform_init(rng, latent, (latent, c)))
        self._register("head.bias", _uniform_init(rng, latent, (c,)))
        if config.dual_head:
            self._register("instance_head.weight", _uniform_init(rng, latent, (latent, c)))
            self._register("instance_head.bias", _uniform_init(rng, latent, (c,)))

    def _register(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise KeyError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, p in self.params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise ad.DimensionError(f"{k}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()
            p.zero_grad()

    def encode(self, instances) -> Node:
        return encode(self.config.encoder, self.params, instances)

    def fit_gaussian(self, negative_instances) -> NegativeGaussian:
        """Refit the negative-instance Gaussian from detached latents."""
        latents = self.encode(np.asarray(negative_instances, dtype=np.float64)).data
        self.gaussian = NegativeGaussian.fit(latents, self.config.ridge)
        return self.gaussian

    def forward(self, instances, latents: Node | None = None) -> BagOutput:
        p = self.params
        z = latents if latents is not None else self.encode(instances)
        kind = self.config.aggregator
        weights = None
        if kind == "max":
            zeta = aggregate_max(z)
        elif kind == "mean":
            zeta = aggregate_mean(z)
        elif kind == "attention":
            zeta, weights = aggregate_attention(z, p["attention.W"], p["attention.V"])
        elif kind == "rgp":
            zeta, weights = aggregate_rgp(z, p["head.weight"], p["head.bias"])
        else:
            zeta, weights = aggregate_anomaly(
                z, p["attention.W"], p["attention.V"], self.gaussian, p["anomaly.w_d"], p["anomaly.w_a"]
            )
        logits = classify(zeta, p["head.weight"], p["head.bias"])
        inst = None
        if self.config.dual_head:
            inst = _linear(z, p["instance_head.weight"], p["instance_head.bias"])
        return BagOutput(
            latents=z,
            zeta=zeta,
            logits=logits,
            instance_weights=weights.data.copy() if weights is not None else np.zeros(0),
            instance_logits=inst,
        )

    def predict_proba(self, bags) -> np.ndarray:
        """Class probabilities, one row per bag (graph-free)."""
        rows = []
        for bag in bags:
            x = bag.instances if hasattr(bag, "instances") else bag
            logits = self.forward(x).logits.data
            e = np.exp(logits - logits.max())
            rows.append(e / e.sum())
        return np.asarray(rows).reshape(len(rows), self.config.n_classes)


class Losses(NamedTuple):
    total: Node
    classification: float
    topo: TopoLossBreakdown


def compute_losses(
    instances,
    label: int,
    model: MILModel,
    lam: float,
    gamma: float = 0.0,
    dual_head: bool | None = None,
    topology: InputTopology | None = None,
) -> Losses:
    """Classification loss plus ``lam`` times the topological penalty for one bag."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    dual = model.config.dual_head if dual_head is None else dual_head
    if dual and not model.config.dual_head:
        raise ValueError("model was built without an instance head")

    x = np.asarray(instances, dtype=np.float64)
    out = model.forward(x)
    loss = ad.cross_entropy(out.logits, label)
    if dual:
        inst = ad.cross_entropy(out.instance_logits, np.full(x.shape[0], label))
        loss = ad.add(ad.scale(loss, 1.0 - gamma), ad.scale(inst, gamma))
    class_value = loss.item()

    if lam > 0:
        topo, parts = topo_loss(x, out.latents, cached=topology)
        loss = ad.add(loss, ad.scale(topo, lam))
    else:
        parts = TopoLossBreakdown(0.0, 0.0)
    return Losses(loss, class_value, parts)


def total_loss(bag, model: MILModel, lam: float, gamma: float = 0.0, dual_head: bool | None = None) -> Node:
    return compute_losses(bag.instances, bag.label, model, lam, gamma, dual_head).total


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout:
#   line 1   b"TOPOMIL-CKPT <version>\n"
#   line 2   UTF-8 JSON header terminated by b"\n":
#              {"config": {...}, "params": [{"name", "shape"}, ...],
#               "gaussian": null | {"ridge", "dim"}}
#   payload  little-endian float64 arrays concatenated in header order,
#            followed by gaussian mean, covariance, precision when present


def save_checkpoint(model: MILModel, path) -> None:
    header = {
        "config": asdict(model.config),
        "params": [{"name": k, "shape": list(p.shape)} for k, p in model.params.items()],
        "gaussian": None,
    }
    arrays = [p.data for p in model.params.values()]
    if model.gaussian is not None:
        g = model.gaussian
        header["gaussian"] = {"ridge": g.ridge, "dim": int(g.mean.shape[0])}
        arrays += [g.mean, g.covariance, g.precision]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> MILModel:
    raw = Path(path).read_bytes()
    first, _, rest = raw.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {int(version)}")
    head, _, payload = rest.partition(b"\n")
    header = json.loads(head.decode("utf-8"))
    model = MILModel(ModelConfig(**header["config"]))

    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(payload):
            raise ValueError(f"{path}: truncated checkpoint payload")
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        return a

    model.load_state_dict({spec["name"]: take(tuple(spec["shape"])) for spec in header["params"]})
    if header["gaussian"] is not None:
        dim = header["gaussian"]["dim"]
        mean, cov, prec = take((dim,)), take((dim, dim)), take((dim, dim))
        model.gaussian = NegativeGaussian(mean, cov, prec, header["gaussian"]["ridge"])
    return model
