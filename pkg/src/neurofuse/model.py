"""Local-global attention network over hybrid multigraphs.

Each layer attends twice: an edge-aware local pass where every node
softmax-weights its incident multigraph edges (parallel edges of
different kinds are separate attention slots), then a standard global
multi-head self-attention over all nodes with residual and row-wise
layer normalization. Global average pooling plus an affine head maps
the final embeddings to one scalar score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import ParamStore, Tensor2, dropout, glorot_uniform
from .errors import ConfigurationError, ValidationError
from .hybrid_graph import EDGE_KIND_COUNT, EdgeKind, HybridGraph

EDGE_ATTR_DIM = EDGE_KIND_COUNT + 1
LN_EPS = 1e-5


@dataclass(frozen=True)
class EdgeAttribute:
    """Typed edge feature: one-hot kind indicator concatenated with the weight."""

    kind: EdgeKind
    weight: float

    def vector(self) -> np.ndarray:
        vec = np.zeros(EDGE_ATTR_DIM)
        vec[self.kind.value] = 1.0
        vec[-1] = self.weight
        return vec


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    heads: int = 4
    layers: int = 2
    dropout: float = 0.2
    d_in: int = 2
    edge_only_kv: bool = False

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.heads < 1 or self.layers < 1 or self.d_in < 1:
            raise ConfigurationError("hidden, heads, layers, and d_in must be >= 1")
        if self.hidden % self.heads != 0:
            raise ConfigurationError(
                f"hidden ({self.hidden}) must be divisible by heads ({self.heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def kv_dim(self) -> int:
        return EDGE_ATTR_DIM if self.edge_only_kv else self.hidden + EDGE_ATTR_DIM

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden, "heads": self.heads, "layers": self.layers,
            "dropout": self.dropout, "d_in": self.d_in,
            "edge_only_kv": self.edge_only_kv,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


class GraphTensors:
    """Per-graph constant tensors: node features plus flattened attention slots.

    Every undirected edge contributes two directed slots (one per
    endpoint doing the attending), ordered by (attending node, neighbor,
    kind) so traces are canonical.
    """

    def __init__(self, node_count: int, features: np.ndarray, slot_src: np.ndarray,
                 slot_nbr: np.ndarray, slot_kind: np.ndarray, slot_attr: np.ndarray):
        self.node_count = node_count
        self.features = Tensor2(features)
        self.slot_src = slot_src
        self.slot_nbr = slot_nbr
        self.slot_kind = slot_kind
        self.attr = Tensor2(slot_attr)

    @classmethod
    def from_graph(cls, graph: HybridGraph) -> "GraphTensors":
        slots = []
        for e in graph.edges:
            slots.append((e.i, e.j, e.kind.value, e.weight))
            slots.append((e.j, e.i, e.kind.value, e.weight))
        slots.sort(key=lambda s: (s[0], s[1], s[2]))
        src = np.array([s[0] for s in slots], dtype=np.int64)
        nbr = np.array([s[1] for s in slots], dtype=np.int64)
        kind = np.array([s[2] for s in slots], dtype=np.int64)
        attr = np.zeros((len(slots), EDGE_ATTR_DIM))
        attr[np.arange(len(slots)), kind] = 1.0
        attr[:, -1] = [s[3] for s in slots]
        return cls(graph.node_count, np.asarray(graph.node_features, dtype=np.float64),
                   src, nbr, kind, attr)

    @property
    def slot_count(self) -> int:
        return int(self.slot_src.size)


@dataclass
class ForwardTrace:
    """One forward pass: final embeddings, attention weights, prediction."""

    node_count: int
    prediction: float
    x_final: np.ndarray
    local_attention: tuple[np.ndarray, ...]
    global_attention: tuple[tuple[np.ndarray, ...], ...]
    slot_src: np.ndarray
    slot_nbr: np.ndarray
    slot_kind: np.ndarray
    pred_tensor: Tensor2 = field(repr=False, default=None)
    x_final_tensor: Tensor2 = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if not math.isfinite(self.prediction):
            raise ValidationError("trace prediction is not finite")
        for layer, alpha in enumerate(self.local_attention):
            sums = np.zeros(self.node_count)
            np.add.at(sums, self.slot_src, alpha)
            attending = np.zeros(self.node_count, dtype=bool)
            attending[self.slot_src] = True
            if np.abs(sums[attending] - 1.0).max(initial=0.0) > 1e-9:
                raise ValidationError(
                    f"local attention weights do not normalize at layer {layer}"
                )


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    """Seeded initialization: Glorot-uniform projections, zero biases,
    unit layer-norm gains. The readout head starts at zero so an
    untrained model predicts the target mean rather than a random
    projection of the pooled embedding."""
    rng = np.random.default_rng(seed)
    params = ParamStore()

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        params.add(f"{name}.W", glorot_uniform((fan_in, fan_out), rng))
        params.add(f"{name}.b", np.zeros((1, fan_out)))

    h = config.hidden
    linear("input", config.d_in, h)
    for layer in range(config.layers):
        linear(f"layer{layer}.local.q", h, h)
        linear(f"layer{layer}.local.k", config.kv_dim, h)
        linear(f"layer{layer}.local.v", config.kv_dim, h)
        for proj in ("q", "k", "v", "o"):
            linear(f"layer{layer}.global.{proj}", h, h)
        params.add(f"layer{layer}.norm.gain", np.ones((1, h)))
        params.add(f"layer{layer}.norm.bias", np.zeros((1, h)))
    params.add("head.W", np.zeros((h, 1)))
    params.add("head.b", np.zeros((1, 1)))
    return params


def _affine(x: Tensor2, params: ParamStore, name: str) -> Tensor2:
    return x @ params[f"{name}.W"] + params[f"{name}.b"]


def layer_norm_rows(x: Tensor2, gain: Tensor2, bias: Tensor2,
                    eps: float = LN_EPS) -> Tensor2:
    """Row-wise layer normalization on the tape (1/n variance)."""
    mean = x.mean(axis=1)
    centered = x - mean
    var = (centered * centered).mean(axis=1)
    return centered / (var + eps).sqrt() * gain + bias


def local_edge_attention(gt: GraphTensors, x: Tensor2, params: ParamStore,
                         prefix: str, config: ModelConfig) -> tuple[Tensor2, Tensor2]:
    """Edge-aware attention over each node's incident slots.

    Queries come from the attending node; keys and values from the
    neighbor embedding concatenated with the 7-dim edge attribute
    (or the attribute alone under edge_only_kv). Logits are scaled by
    1/sqrt(hidden) and normalized per attending node. Nodes with no
    incident edge produce a zero row.

    Returns
    -------
    (z, alpha) : embeddings (nodes x hidden) and slot weights (slots x 1).
    """
    q = _affine(x, params, f"{prefix}.q")
    if config.edge_only_kv:
        kv_input = gt.attr
    else:
        kv_input = Tensor2.concat_cols([x.gather_rows(gt.slot_nbr), gt.attr])
    k = _affine(kv_input, params, f"{prefix}.k")
    v = _affine(kv_input, params, f"{prefix}.v")
    logits = (q.gather_rows(gt.slot_src) * k).sum(axis=1) * (1.0 / math.sqrt(config.hidden))
    alpha = logits.segment_softmax(gt.slot_src, gt.node_count)
    z = (alpha * v).segment_sum(gt.slot_src, gt.node_count)
    return z, alpha


def global_self_attention(x: Tensor2, params: ParamStore, prefix: str,
                          config: ModelConfig, rng: np.random.Generator | None = None,
                          training: bool = False) -> tuple[Tensor2, tuple[np.ndarray, ...]]:
    """Multi-head self-attention over all nodes, then residual + layer norm.

    Queries, keys, and values are projections of the same embeddings
    (per-head width hidden/heads, logits scaled by its square root, then
    an output projection). No positional information enters anywhere.
    """
    h, heads = config.hidden, config.heads
    dh = h // heads
    q = _affine(x, params, f"{prefix}.global.q")
    k = _affine(x, params, f"{prefix}.global.k")
    v = _affine(x, params, f"{prefix}.global.v")
    head_outputs = []
    head_attn = []
    for a in range(heads):
        lo, hi = a * dh, (a + 1) * dh
        logits = q.slice_cols(lo, hi) @ k.slice_cols(lo, hi).transpose()
        weights = (logits * (1.0 / math.sqrt(dh))).softmax_rows()
        head_attn.append(weights.values.copy())
        head_outputs.append(weights @ v.slice_cols(lo, hi))
    mixed = _affine(Tensor2.concat_cols(head_outputs), params, f"{prefix}.global.o")
    mixed = dropout(mixed, config.dropout, rng, training)
    out = layer_norm_rows(x + mixed, params[f"{prefix}.norm.gain"],
                          params[f"{prefix}.norm.bias"])
    return out, tuple(head_attn)


def forward(graph: HybridGraph | GraphTensors, params: ParamStore,
            config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None) -> ForwardTrace:
    """Run the network over one graph and record a full trace.

    mode "train" applies dropout (requires rng); mode "eval" is a pure
    function of its inputs.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and config.dropout > 0.0 and rng is None:
        raise ConfigurationError("training mode requires a random generator")
    gt = GraphTensors.from_graph(graph) if isinstance(graph, HybridGraph) else graph
    if gt.features.shape[1] != config.d_in:
        raise ValidationError(
            f"node feature dim {gt.features.shape[1]} does not match d_in {config.d_in}"
        )

    x = _affine(gt.features, params, "input")
    local_weights = []
    global_weights = []
    for layer in range(config.layers):
        z, alpha = local_edge_attention(gt, x, params, f"layer{layer}.local", config)
        local_weights.append(alpha.values[:, 0].copy())
        z = dropout(z, config.dropout, rng, training)
        x, head_attn = global_self_attention(z, params, f"layer{layer}", config,
                                             rng=rng, training=training)
        global_weights.append(head_attn)

    pooled = x.mean(axis=0)
    pred = _affine(pooled, params, "head")
    return ForwardTrace(
        node_count=gt.node_count,
        prediction=pred.item(),
        x_final=x.values.copy(),
        local_attention=tuple(local_weights),
        global_attention=tuple(global_weights),
        slot_src=gt.slot_src,
        slot_nbr=gt.slot_nbr,
        slot_kind=gt.slot_kind,
        pred_tensor=pred,
        x_final_tensor=x,
    )


@dataclass(frozen=True)
class ConnectionImportance:
    i: int
    j: int
    kind: EdgeKind
    mean_weight: float


def extract_attention_importance(traces: list[ForwardTrace]) -> list[ConnectionImportance]:
    """Average local attention weights per (unordered pair, kind).

    The mean runs over every occurrence of the connection: both slot
    directions, every layer, every trace in which the connection exists.
    Returns connections ranked by descending mean weight (ties by pair
    then kind, for determinism).
    """
    if not traces:
        raise ValidationError("no traces to aggregate")
    totals: dict[tuple[int, int, int], float] = {}
    counts: dict[tuple[int, int, int], int] = {}
    for trace in traces:
        lo = np.minimum(trace.slot_src, trace.slot_nbr)
        hi = np.maximum(trace.slot_src, trace.slot_nbr)
        keys = list(zip(lo.tolist(), hi.tolist(), trace.slot_kind.tolist()))
        for alpha in trace.local_attention:
            for key, weight in zip(keys, alpha.tolist()):
                totals[key] = totals.get(key, 0.0) + weight
                counts[key] = counts.get(key, 0) + 1
    ranked = sorted(
        ((i, j, kind, totals[(i, j, kind)] / counts[(i, j, kind)])
         for (i, j, kind) in totals),
        key=lambda item: (-item[3], item[0], item[1], item[2]),
    )
    return [ConnectionImportance(i=i, j=j, kind=EdgeKind(kind), mean_weight=w)
            for i, j, kind, w in ranked]
