"""Hybrid multimodal graph assembly: unimodal k-NN edges, cross-modal
cosine links, and multi-scale detour edges over one shared node set."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .connectome import ConnectivityMatrix, SparseEdgeSet, SubjectRecord, knn_sparsify, sbm_subject_matrix
from .errors import ConfigurationError, ValidationError


class EdgeKind(Enum):
    STRUCTURAL = 0
    FUNCTIONAL = 1
    CROSS_MODAL = 2
    DETOUR_SHORT = 3
    DETOUR_MEDIUM = 4
    DETOUR_LONG = 5

    @property
    def label(self) -> str:
        return self.name.lower()


EDGE_KIND_COUNT = len(EdgeKind)
_KIND_BY_LABEL = {kind.label: kind for kind in EdgeKind}
_DETOUR_KINDS = (EdgeKind.DETOUR_SHORT, EdgeKind.DETOUR_MEDIUM, EdgeKind.DETOUR_LONG)


def edge_kind_from_label(label: str) -> EdgeKind:
    if label not in _KIND_BY_LABEL:
        raise ValidationError(f"unknown edge kind {label!r}")
    return _KIND_BY_LABEL[label]


def detour_bucket(radius: int) -> EdgeKind:
    """Map a detour radius to its scale bucket: 2 is short, 3-4 medium, >=5 long."""
    if radius < 2:
        raise ConfigurationError(f"detour radius must be >= 2, got {radius}")
    if radius == 2:
        return EdgeKind.DETOUR_SHORT
    if radius <= 4:
        return EdgeKind.DETOUR_MEDIUM
    return EdgeKind.DETOUR_LONG


@dataclass(frozen=True)
class HybridEdge:
    """One typed edge of the hybrid multigraph, canonical with i < j."""

    i: int
    j: int
    kind: EdgeKind
    weight: float

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ValidationError(f"self-edge at node {self.i}")
        if self.i > self.j:
            lo, hi = self.j, self.i
            object.__setattr__(self, "i", lo)
            object.__setattr__(self, "j", hi)
        if not math.isfinite(self.weight):
            raise ValidationError(f"edge ({self.i}, {self.j}) weight is not finite")
        if self.kind is EdgeKind.CROSS_MODAL and not -1.0 <= self.weight <= 1.0:
            raise ValidationError(
                f"cross-modal weight {self.weight} outside [-1, 1] at ({self.i}, {self.j})"
            )
        if self.kind in _DETOUR_KINDS and self.weight < 0.0:
            raise ValidationError(
                f"detour weight {self.weight} negative at ({self.i}, {self.j})"
            )

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.j)


@dataclass(frozen=True)
class HybridGraph:
    """Typed multigraph over one subject's nodes plus per-node features.

    The same unordered pair may appear once per edge kind. node_features
    holds [structural row mean, functional row mean] per node.
    """

    node_count: int
    edges: tuple[HybridEdge, ...]
    node_features: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.node_features, dtype=np.float64)
        if feats.shape != (self.node_count, 2):
            raise ValidationError(
                f"node_features shape {feats.shape}, expected ({self.node_count}, 2)"
            )
        if not np.isfinite(feats).all():
            raise ValidationError("node_features contain non-finite entries")
        object.__setattr__(self, "node_features", feats)
        seen: set[tuple[int, int, EdgeKind]] = set()
        for e in self.edges:
            if not (0 <= e.i < e.j < self.node_count):
                raise ValidationError(f"edge ({e.i}, {e.j}) out of node range")
            key = (e.i, e.j, e.kind)
            if key in seen:
                raise ValidationError(
                    f"duplicate edge ({e.i}, {e.j}) of kind {e.kind.label}"
                )
            seen.add(key)

    def kind_counts(self) -> dict[str, int]:
        counts = {kind.label: 0 for kind in EdgeKind}
        for e in self.edges:
            counts[e.kind.label] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "node_features": [[float(x) for x in row] for row in self.node_features],
            "edges": [
                {"i": e.i, "j": e.j, "kind": e.kind.label, "weight": float(e.weight)}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "HybridGraph":
        try:
            edges = tuple(
                HybridEdge(i=int(e["i"]), j=int(e["j"]),
                           kind=edge_kind_from_label(e["kind"]),
                           weight=float(e["weight"]))
                for e in payload["edges"]
            )
            return cls(
                node_count=int(payload["node_count"]),
                edges=edges,
                node_features=np.asarray(payload["node_features"], dtype=np.float64),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed graph payload: {exc}") from exc


@dataclass(frozen=True)
class GraphConfig:
    """Graph-construction parameters and ablation switches."""

    k: int = 5
    gamma: int = 8
    radii: tuple[int, ...] = (2, 3, 5)
    use_sbm: bool = True
    use_cmc: bool = True
    use_mdc: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        if not self.radii:
            raise ConfigurationError("radii must be nonempty")
        if any(r < 2 for r in self.radii):
            raise ConfigurationError(f"every radius must be >= 2, got {self.radii}")
        if list(self.radii) != sorted(set(self.radii)):
            raise ConfigurationError(f"radii must be strictly ascending, got {self.radii}")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "gamma": self.gamma,
            "radii": list(self.radii),
            "use_sbm": self.use_sbm,
            "use_cmc": self.use_cmc,
            "use_mdc": self.use_mdc,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GraphConfig":
        data = dict(payload)
        if "radii" in data:
            data["radii"] = tuple(data["radii"])
        return cls(**data)


def cross_modal_connections(ws: ConnectivityMatrix, wf: ConnectivityMatrix,
                            gamma: int) -> list[HybridEdge]:
    """Link each node's structural profile to its most similar functional profiles.

    For node i, cosine similarity is computed between row i of the dense
    structural matrix and row j of the dense functional matrix for every
    j != i; the top gamma most similar (signed similarity, ties toward
    the smaller j) become cross-modal edges. A zero-norm profile has
    similarity 0 to everything. When both directions select the same
    unordered pair, the larger of the two similarities is stored.
    """
    if ws.node_count != wf.node_count:
        raise ValidationError(
            f"modality size mismatch: {ws.node_count} vs {wf.node_count}"
        )
    eta = ws.node_count
    if not isinstance(gamma, int) or not (1 <= gamma <= eta):
        raise ConfigurationError(f"gamma must satisfy 1 <= gamma <= {eta}, got {gamma!r}")

    s_rows = ws.values
    f_rows = wf.values
    s_norm = np.linalg.norm(s_rows, axis=1)
    f_norm = np.linalg.norm(f_rows, axis=1)
    sim = s_rows @ f_rows.T
    denom = np.outer(s_norm, f_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0.0, sim / np.where(denom > 0.0, denom, 1.0), 0.0)
    sim = np.clip(sim, -1.0, 1.0)

    best: dict[tuple[int, int], float] = {}
    take = min(gamma, eta - 1)
    for i in range(eta):
        candidates = [j for j in range(eta) if j != i]
        candidates.sort(key=lambda j: (-sim[i, j], j))
        for j in candidates[:take]:
            pair = (min(i, j), max(i, j))
            value = float(sim[i, j])
            if pair not in best or value > best[pair]:
                best[pair] = value
    return [
        HybridEdge(i=i, j=j, kind=EdgeKind.CROSS_MODAL, weight=w)
        for (i, j), w in sorted(best.items())
    ]


def count_detours(structural_adjacency: np.ndarray, i: int, j: int, r: int) -> int:
    """Count simple paths of exactly r edges between i and j.

    Parameters
    ----------
    structural_adjacency : ndarray
        Symmetric 0/1 (or boolean) matrix with zero diagonal.
    i, j : int
        Distinct endpoints.
    r : int
        Path length in edges, r >= 2 (the direct edge is never a detour).

    Returns
    -------
    int
        Number of injective node sequences i, v1, ..., v_{r-1}, j where
        consecutive nodes are adjacent.
    """
    if r < 2:
        raise ConfigurationError(f"detour radius must be >= 2, got {r}")
    adj = np.asarray(structural_adjacency)
    eta = adj.shape[0]
    if adj.ndim != 2 or adj.shape[1] != eta:
        raise ValidationError(f"adjacency must be square, got {adj.shape}")
    adj = adj != 0
    if not np.array_equal(adj, adj.T):
        raise ValidationError("adjacency must be symmetric")
    if adj.diagonal().any():
        raise ValidationError("adjacency must have a zero diagonal")
    if not (0 <= i < eta and 0 <= j < eta):
        raise ValidationError(f"endpoints ({i}, {j}) out of range for {eta} nodes")
    if i == j:
        raise ValidationError("detour endpoints must be distinct")
    if r > eta - 1:
        return 0

    neighbors = [np.flatnonzero(adj[u]) for u in range(eta)]

    # hop distance to j lets the search prune branches that cannot reach
    # j within the remaining edge budget
    dist = np.full(eta, eta + 1, dtype=np.int64)
    dist[j] = 0
    queue = deque([j])
    while queue:
        u = queue.popleft()
        for v in neighbors[u]:
            if dist[v] > dist[u] + 1:
                dist[v] = dist[u] + 1
                queue.append(v)
    if dist[i] > r:
        return 0

    visited = np.zeros(eta, dtype=bool)
    visited[i] = True

    def walk(u: int, remaining: int) -> int:
        if remaining == 1:
            return int(adj[u, j])
        total = 0
        for v in neighbors[u]:
            if visited[v] or v == j or dist[v] > remaining - 1:
                continue
            visited[v] = True
            total += walk(int(v), remaining - 1)
            visited[v] = False
        return total

    return walk(i, r)


def multiscale_detour_connections(ws_edges: SparseEdgeSet, wf_edges: SparseEdgeSet,
                                  radii: tuple[int, ...] | list[int]) -> list[HybridEdge]:
    """Build detour edges between functionally linked pairs.

    Both sparse edge sets are binarized; for every pair present in the
    functional set and every radius, simple paths of that exact length
    are counted in the binary structural graph. Counts that land in the
    same scale bucket are summed, and a bucket with total count c > 0
    yields one edge of weight ln(1 + c).
    """
    if ws_edges.node_count != wf_edges.node_count:
        raise ValidationError(
            f"edge-set size mismatch: {ws_edges.node_count} vs {wf_edges.node_count}"
        )
    radii = tuple(int(r) for r in radii)
    if not radii:
        raise ConfigurationError("radii must be nonempty")
    if list(radii) != sorted(set(radii)):
        raise ConfigurationError(f"radii must be strictly ascending, got {radii}")

    adj_s = ws_edges.binary_adjacency()
    edges: list[HybridEdge] = []
    for i, j in wf_edges.pairs():
        bucket_counts: dict[EdgeKind, int] = {}
        for r in radii:
            c = count_detours(adj_s, i, j, r)
            if c:
                kind = detour_bucket(r)
                bucket_counts[kind] = bucket_counts.get(kind, 0) + c
        for kind in _DETOUR_KINDS:
            if kind in bucket_counts:
                edges.append(HybridEdge(i=i, j=j, kind=kind,
                                        weight=math.log1p(bucket_counts[kind])))
    return edges


def assemble_hybrid_graph(subject: SubjectRecord, config: GraphConfig) -> HybridGraph:
    """Assemble one subject's hybrid multigraph.

    Families included: structural and functional k-NN edges with signed
    weights, cross-modal cosine edges, and multi-scale detour edges,
    subject to the ablation switches. Node feature row i is
    [mean over j != i of Ws[i, j], mean over j != i of Wf[i, j]]; the
    structural column is zeroed when the structural modality is off.
    """
    eta = subject.node_count
    wf = subject.fnc
    ws = sbm_subject_matrix(subject.sbm)

    edges: list[HybridEdge] = []
    wf_knn = knn_sparsify(wf, config.k)
    edges.extend(
        HybridEdge(i=i, j=j, kind=EdgeKind.FUNCTIONAL, weight=w)
        for i, j, w in wf_knn.edges
    )

    if config.use_sbm:
        ws_knn = knn_sparsify(ws, config.k)
        edges.extend(
            HybridEdge(i=i, j=j, kind=EdgeKind.STRUCTURAL, weight=w)
            for i, j, w in ws_knn.edges
        )
        if config.use_cmc:
            edges.extend(cross_modal_connections(ws, wf, config.gamma))
        if config.use_mdc:
            edges.extend(multiscale_detour_connections(ws_knn, wf_knn, config.radii))

    if not any(e.weight != 0.0 for e in edges):
        raise ValidationError(
            f"degenerate subject {subject.subject_id!r}: no retained edge has "
            "nonzero weight"
        )

    off_diag = eta - 1
    col_s = ws.values.sum(axis=1) / off_diag if config.use_sbm else np.zeros(eta)
    col_f = wf.values.sum(axis=1) / off_diag
    features = np.column_stack([col_s, col_f])

    edges.sort(key=lambda e: (e.kind.value, e.i, e.j))
    return HybridGraph(node_count=eta, edges=tuple(edges), node_features=features)
