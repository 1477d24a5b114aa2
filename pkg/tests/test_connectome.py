import numpy as np
import pytest

from neurofuse import (
    ConfigurationError,
    ConnectivityMatrix,
    Modality,
    SbmLoadings,
    SparseEdgeSet,
    SubjectRecord,
    ValidationError,
    knn_sparsify,
    load_cohort,
    save_cohort,
    sbm_subject_matrix,
)
from reference import brute_knn_pairs


def functional(values) -> ConnectivityMatrix:
    return ConnectivityMatrix(values=np.asarray(values, dtype=float),
                              modality=Modality.FUNCTIONAL)


def make_record(sid: str, loadings, fnc, fluid: float = 100.0) -> SubjectRecord:
    return SubjectRecord(
        subject_id=sid,
        sbm=SbmLoadings(values=np.asarray(loadings, dtype=float), subject_id=sid),
        fnc=functional(fnc),
        targets={"fluid": fluid, "crystallized": 95.0, "total": 102.5},
    )


def random_symmetric(rng: np.random.Generator, eta: int, bound: float = 1.0) -> np.ndarray:
    raw = rng.uniform(-bound, bound, size=(eta, eta))
    mat = (raw + raw.T) / 2.0
    np.fill_diagonal(mat, 0.0)
    return mat


class TestSbmLoadings:
    def test_rejects_non_finite_entry_naming_index(self):
        values = np.array([0.1, np.nan, 0.3])
        with pytest.raises(ValidationError, match="index 1"):
            SbmLoadings(values=values, subject_id="sub-0000")

    def test_rejects_short_vector(self):
        with pytest.raises(ValidationError):
            SbmLoadings(values=np.array([1.0]), subject_id="sub-0000")

    def test_rejects_matrix_input(self):
        with pytest.raises(ValidationError):
            SbmLoadings(values=np.eye(3), subject_id="sub-0000")


class TestConnectivityMatrix:
    def test_rejects_asymmetry(self):
        values = np.array([[0.0, 0.5], [0.4, 0.0]])
        with pytest.raises(ValidationError):
            functional(values)

    def test_rejects_nonzero_diagonal(self):
        values = np.array([[0.1, 0.5], [0.5, 0.0]])
        with pytest.raises(ValidationError):
            functional(values)

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            functional(np.zeros((2, 3)))


class TestSbmSubjectMatrix:
    def test_zero_component_example(self):
        mat = sbm_subject_matrix(SbmLoadings(values=np.array([1.0, 0.0]),
                                             subject_id="s"))
        assert np.array_equal(mat.values, np.zeros((2, 2)))

    def test_outer_product_off_diagonals(self):
        mat = sbm_subject_matrix(SbmLoadings(values=np.array([1.0, 2.0, 3.0]),
                                             subject_id="s"))
        assert mat.values[0, 1] == 2.0
        assert mat.values[0, 2] == 3.0
        assert mat.values[1, 2] == 6.0
        assert np.array_equal(np.diag(mat.values), np.zeros(3))

    def test_zero_vector_gives_zero_matrix(self):
        mat = sbm_subject_matrix(SbmLoadings(values=np.zeros(53), subject_id="s"))
        assert not mat.values.any()

    def test_exact_symmetry_and_scaling_property(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            v = rng.standard_normal(rng.integers(2, 12))
            mat = sbm_subject_matrix(SbmLoadings(values=v, subject_id="s")).values
            assert np.array_equal(mat, mat.T)
            scaled = sbm_subject_matrix(
                SbmLoadings(values=3.0 * v, subject_id="s")).values
            assert np.allclose(scaled, 9.0 * mat, atol=1e-12)


class TestKnnSparsify:
    def test_matches_brute_force_selection(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            eta = int(rng.integers(3, 12))
            mat = functional(random_symmetric(rng, eta))
            k = int(rng.integers(1, eta))
            got = {(i, j): w for i, j, w in knn_sparsify(mat, k).edges}
            assert got == brute_knn_pairs(mat.values, k)

    def test_row_selection_by_absolute_weight(self):
        values = np.zeros((4, 4))
        values[0, 1] = values[1, 0] = 0.9
        values[0, 2] = values[2, 0] = -0.8
        values[0, 3] = values[3, 0] = 0.1
        pairs = set(knn_sparsify(functional(values), k=2).pairs())
        assert (0, 1) in pairs and (0, 2) in pairs
        # (0, 3) survives only through node 3's own selection
        assert (0, 3) in pairs

    def test_saturating_k_keeps_every_pair(self):
        rng = np.random.default_rng(3)
        mat = functional(random_symmetric(rng, 6))
        edges = knn_sparsify(mat, k=5)
        assert len(edges) == 15

    def test_zero_weights_never_retained(self):
        values = np.zeros((3, 3))
        values[0, 1] = values[1, 0] = 0.5
        assert knn_sparsify(functional(values), k=2).pairs() == [(0, 1)]

    def test_tie_break_prefers_smaller_index(self):
        values = np.zeros((4, 4))
        for j in (1, 2, 3):
            values[0, j] = values[j, 0] = 0.5
        assert (0, 1) in knn_sparsify(functional(values), k=1).pairs()

    def test_k_out_of_range(self):
        mat = functional(np.zeros((4, 4)))
        with pytest.raises(ConfigurationError):
            knn_sparsify(mat, 0)
        with pytest.raises(ConfigurationError):
            knn_sparsify(mat, 4)

    def test_degree_lower_bound_and_edge_budget(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            eta = int(rng.integers(4, 10))
            mat = random_symmetric(rng, eta)
            mat[mat == 0.0] = 0.25  # make all off-diagonals nonzero
            np.fill_diagonal(mat, 0.0)
            mat = (mat + mat.T) / 2.0
            k = int(rng.integers(1, eta))
            edges = knn_sparsify(functional(mat), k)
            assert len(edges) <= eta * k
            degree = np.zeros(eta, dtype=int)
            for i, j, _ in edges.edges:
                degree[i] += 1
                degree[j] += 1
            assert (degree >= min(k, eta - 1)).all()


class TestSparseEdgeSet:
    def test_dense_round_trip(self):
        edges = SparseEdgeSet(node_count=4, edges=((0, 3, -0.25), (1, 2, 0.5)))
        dense = edges.to_dense()
        assert dense[1, 2] == 0.5 and dense[2, 1] == 0.5
        assert dense[0, 3] == -0.25
        assert len(edges) == 2

    def test_rejects_non_canonical_order(self):
        with pytest.raises(ValidationError):
            SparseEdgeSet(node_count=4, edges=((2, 1, 0.5),))

    def test_rejects_zero_weight(self):
        with pytest.raises(ValidationError):
            SparseEdgeSet(node_count=3, edges=((0, 1, 0.0),))

    def test_rejects_duplicate_pair(self):
        with pytest.raises(ValidationError):
            SparseEdgeSet(node_count=3, edges=((0, 1, 0.5), (1, 0, 0.2)))

    def test_binary_adjacency_symmetric_zero_diagonal(self):
        edges = SparseEdgeSet(node_count=3, edges=((0, 1, -0.7), (1, 2, 0.2)))
        adj = edges.binary_adjacency()
        assert np.array_equal(adj, adj.T)
        assert not np.diag(adj).any()
        assert adj[0, 1] == 1 and adj[1, 2] == 1 and adj[0, 2] == 0


class TestSubjectRecord:
    def test_rejects_structural_matrix_as_fnc(self):
        mat = ConnectivityMatrix(values=np.zeros((3, 3)), modality=Modality.STRUCTURAL)
        with pytest.raises(ValidationError):
            SubjectRecord(subject_id="s", sbm=SbmLoadings(values=np.ones(3), subject_id="s"),
                          fnc=mat, targets={"fluid": 1.0, "crystallized": 1.0, "total": 1.0})

    def test_rejects_size_mismatch(self):
        with pytest.raises(ValidationError):
            make_record("s", [1.0, 2.0], np.zeros((3, 3)))

    def test_rejects_missing_target(self):
        with pytest.raises(ValidationError):
            SubjectRecord(subject_id="s",
                          sbm=SbmLoadings(values=np.ones(3), subject_id="s"),
                          fnc=functional(np.zeros((3, 3))),
                          targets={"fluid": 1.0})


class TestCohortRoundTrip:
    def test_save_then_load_is_exact(self, tmp_path):
        rng = np.random.default_rng(23)
        records = [
            make_record(f"sub-{n:04d}", rng.standard_normal(5),
                        random_symmetric(rng, 5),
                        fluid=float(100 + rng.standard_normal() * 10))
            for n in range(4)
        ]
        save_cohort(records, tmp_path)
        loaded = load_cohort(tmp_path)
        assert len(loaded) == 4
        for orig, back in zip(records, loaded):
            assert back.subject_id == orig.subject_id
            assert np.array_equal(back.sbm.values, orig.sbm.values)
            assert np.array_equal(back.fnc.values, orig.fnc.values)
            assert back.targets == orig.targets

    def test_manifest_shape(self, tmp_path):
        import json

        rng = np.random.default_rng(29)
        records = [make_record("sub-0000", rng.standard_normal(4),
                               random_symmetric(rng, 4))]
        save_cohort(records, tmp_path, extra_manifest={"note": "hello"})
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["node_count"] == 4
        assert manifest["note"] == "hello"
        entry = manifest["subjects"][0]
        assert set(entry) == {"subject_id", "fnc", "loadings", "targets"}

    def test_refuses_saving_empty_cohort(self, tmp_path):
        with pytest.raises(ValidationError):
            save_cohort([], tmp_path)

    def test_empty_manifest_errors(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"node_count": 4, "subjects": []}\n')
        with pytest.raises(ValidationError, match="empty cohort"):
            load_cohort(tmp_path)

    def test_dimension_mismatch_names_subject(self, tmp_path):
        rng = np.random.default_rng(31)
        records = [
            make_record("sub-0000", rng.standard_normal(4), random_symmetric(rng, 4)),
            make_record("sub-0001", rng.standard_normal(4), random_symmetric(rng, 4)),
        ]
        save_cohort(records, tmp_path)
        (tmp_path / "loadings" / "sub-0001.csv").write_text("0.1,0.2,0.3\n")
        with pytest.raises(ValidationError, match="sub-0001"):
            load_cohort(tmp_path)

    def test_out_of_range_fnc_rejected(self, tmp_path):
        rng = np.random.default_rng(37)
        records = [make_record("sub-0000", rng.standard_normal(3),
                               random_symmetric(rng, 3))]
        save_cohort(records, tmp_path)
        fnc = np.zeros((3, 3))
        fnc[0, 1] = fnc[1, 0] = 1.5
        (tmp_path / "fnc" / "sub-0000.csv").write_text(
            "\n".join(",".join(repr(v) for v in row) for row in fnc) + "\n")
        with pytest.raises(ValidationError, match="sub-0000"):
            load_cohort(tmp_path)
