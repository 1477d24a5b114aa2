"""Per-subject connectivity inputs: loading vectors, connectivity matrices,
k-NN sparsification, and the on-disk cohort format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ValidationError

TARGET_NAMES = ("fluid", "crystallized", "total")


class Modality(Enum):
    STRUCTURAL = "structural"
    FUNCTIONAL = "functional"


@dataclass(frozen=True)
class SbmLoadings:
    """One subject's vector of per-network loading coefficients."""

    values: np.ndarray
    subject_id: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValidationError(
                f"loadings for subject {self.subject_id!r} must be a vector "
                f"of length >= 2, got shape {arr.shape}"
            )
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise ValidationError(
                f"non-finite loading at index {int(bad[0])} for subject "
                f"{self.subject_id!r}"
            )
        object.__setattr__(self, "values", arr)

    @property
    def node_count(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric zero-diagonal node-by-node connectivity weights."""

    values: np.ndarray
    modality: Modality

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationError(f"connectivity matrix must be square, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("connectivity matrix contains non-finite entries")
        if not np.array_equal(arr, arr.T):
            raise ValidationError("connectivity matrix is not symmetric")
        if np.any(arr.diagonal() != 0.0):
            raise ValidationError("connectivity matrix has a nonzero diagonal")
        object.__setattr__(self, "values", arr)

    @property
    def node_count(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class SparseEdgeSet:
    """Undirected weighted edges retained after sparsification.

    Edges are stored canonically as (i, j, weight) with i < j, sorted by
    (i, j). Every retained weight is nonzero.
    """

    node_count: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for i, j, w in self.edges:
            if not (0 <= i < j < self.node_count):
                raise ValidationError(f"edge ({i}, {j}) out of range or not canonical")
            if w == 0.0 or not np.isfinite(w):
                raise ValidationError(f"edge ({i}, {j}) has invalid weight {w}")
            if (i, j) in seen:
                raise ValidationError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    def __len__(self) -> int:
        return len(self.edges)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, _ in self.edges]

    def binary_adjacency(self) -> np.ndarray:
        """Symmetric 0/1 adjacency over the retained pairs."""
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for i, j, _ in self.edges:
            adj[i, j] = True
            adj[j, i] = True
        return adj

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.node_count, self.node_count), dtype=np.float64)
        for i, j, w in self.edges:
            dense[i, j] = w
            dense[j, i] = w
        return dense


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: loading vector, functional connectivity, target scores."""

    subject_id: str
    sbm: SbmLoadings
    fnc: ConnectivityMatrix
    targets: dict[str, float] = field(compare=False)

    def __post_init__(self) -> None:
        if self.fnc.modality is not Modality.FUNCTIONAL:
            raise ValidationError(
                f"subject {self.subject_id!r}: fnc matrix must be functional modality"
            )
        if self.sbm.node_count != self.fnc.node_count:
            raise ValidationError(
                f"subject {self.subject_id!r}: loadings length "
                f"{self.sbm.node_count} does not match fnc size {self.fnc.node_count}"
            )
        for name in TARGET_NAMES:
            if name not in self.targets:
                raise ValidationError(
                    f"subject {self.subject_id!r}: missing target {name!r}"
                )
            if not np.isfinite(self.targets[name]):
                raise ValidationError(
                    f"subject {self.subject_id!r}: non-finite target {name!r}"
                )

    @property
    def node_count(self) -> int:
        return self.sbm.node_count


def sbm_subject_matrix(loadings: SbmLoadings) -> ConnectivityMatrix:
    """Expand a loading vector into a structural connectivity matrix.

    Parameters
    ----------
    loadings : SbmLoadings
        Per-network loading coefficients for one subject.

    Returns
    -------
    ConnectivityMatrix
        The outer product of the loading vector with itself, with the
        diagonal zeroed (self-edges carry no information and would
        otherwise dominate top-k selection).
    """
    v = loadings.values
    mat = np.outer(v, v)
    np.fill_diagonal(mat, 0.0)
    # outer() of a symmetric pair is symmetric up to float noise only when
    # computed once; mirror the upper triangle to make symmetry exact
    mat = np.triu(mat) + np.triu(mat, 1).T
    return ConnectivityMatrix(values=mat, modality=Modality.STRUCTURAL)


def knn_sparsify(matrix: ConnectivityMatrix, k: int) -> SparseEdgeSet:
    """Keep each node's k strongest neighbors by absolute weight.

    Selection is per node over |weight| (weights are signed correlations,
    so magnitude is the only consistent strength ordering); the result is
    the union over nodes, i.e. an edge survives if either endpoint picked
    it. Ties in |weight| break toward the smaller neighbor index. Zero
    weights are never retained, even when fewer than k nonzero candidates
    exist.

    Parameters
    ----------
    matrix : ConnectivityMatrix
    k : int
        Neighbors per node, 1 <= k <= node_count - 1.

    Returns
    -------
    SparseEdgeSet
        Canonically ordered undirected edges with signed source weights.
    """
    eta = matrix.node_count
    if not isinstance(k, int) or not (1 <= k <= eta - 1):
        raise ConfigurationError(f"k must satisfy 1 <= k <= {eta - 1}, got {k!r}")
    w = matrix.values
    selected: set[tuple[int, int]] = set()
    for i in range(eta):
        candidates = [j for j in range(eta) if j != i]
        candidates.sort(key=lambda j: (-abs(w[i, j]), j))
        for j in candidates[:k]:
            if w[i, j] == 0.0:
                continue
            selected.add((min(i, j), max(i, j)))
    edges = tuple(
        (i, j, float(w[i, j])) for i, j in sorted(selected)
    )
    return SparseEdgeSet(node_count=eta, edges=edges)


def _format_row(values: np.ndarray) -> str:
    # repr round-trips float64 exactly, which the cohort round-trip contract needs
    return ",".join(repr(float(x)) for x in values)


def save_cohort(records: list[SubjectRecord], out_dir: str | Path,
                extra_manifest: dict | None = None) -> Path:
    """Write a cohort directory: manifest.json plus per-subject CSV files."""
    if not records:
        raise ValidationError("refusing to write an empty cohort")
    out = Path(out_dir)
    (out / "fnc").mkdir(parents=True, exist_ok=True)
    (out / "loadings").mkdir(parents=True, exist_ok=True)
    subjects = []
    for rec in records:
        sid = rec.subject_id
        fnc_rel = f"fnc/{sid}.csv"
        load_rel = f"loadings/{sid}.csv"
        with open(out / fnc_rel, "w") as fh:
            for row in rec.fnc.values:
                fh.write(_format_row(row) + "\n")
        with open(out / load_rel, "w") as fh:
            fh.write(_format_row(rec.sbm.values) + "\n")
        subjects.append({
            "subject_id": sid,
            "fnc": fnc_rel,
            "loadings": load_rel,
            "targets": {name: float(rec.targets[name]) for name in TARGET_NAMES},
        })
    manifest = {"node_count": records[0].node_count, "subjects": subjects}
    if extra_manifest:
        for key, value in extra_manifest.items():
            if key not in manifest:
                manifest[key] = value
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_cohort(source: str | Path) -> list[SubjectRecord]:
    """Load and validate a cohort directory written by save_cohort.

    The node count is inferred from the first subject and enforced on all
    others. FNC entries must lie in [-1, 1]; values are parsed as 64-bit
    floats so a save/load round trip is bit-exact.
    """
    root = Path(source)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ValidationError(f"no manifest.json under {root}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed manifest.json: {exc}") from exc
    subjects = manifest.get("subjects", [])
    if not subjects:
        raise ValidationError("empty cohort")

    records: list[SubjectRecord] = []
    eta: int | None = None
    for entry in subjects:
        sid = str(entry.get("subject_id", f"#{len(records)}"))
        for key in ("fnc", "loadings", "targets"):
            if key not in entry:
                raise ValidationError(f"subject {sid!r}: manifest missing field {key!r}")
        try:
            fnc_vals = np.loadtxt(root / entry["fnc"], delimiter=",", dtype=np.float64,
                                  ndmin=2)
            load_vals = np.loadtxt(root / entry["loadings"], delimiter=",",
                                   dtype=np.float64, ndmin=1)
        except (OSError, ValueError) as exc:
            raise ValidationError(f"subject {sid!r}: unreadable data file ({exc})") from exc
        if eta is None:
            eta = int(load_vals.size)
        if load_vals.size != eta:
            raise ValidationError(
                f"subject {sid!r}: loadings length {load_vals.size}, expected {eta}"
            )
        if fnc_vals.shape != (eta, eta):
            raise ValidationError(
                f"subject {sid!r}: fnc shape {fnc_vals.shape}, expected ({eta}, {eta})"
            )
        if np.isfinite(fnc_vals).all() and np.abs(fnc_vals).max(initial=0.0) > 1.0:
            raise ValidationError(f"subject {sid!r}: fnc entries outside [-1, 1]")
        try:
            record = SubjectRecord(
                subject_id=sid,
                sbm=SbmLoadings(values=load_vals, subject_id=sid),
                fnc=ConnectivityMatrix(values=fnc_vals, modality=Modality.FUNCTIONAL),
                targets={k: float(v) for k, v in entry["targets"].items()},
            )
        except ValidationError:
            raise
        records.append(record)
    return records
