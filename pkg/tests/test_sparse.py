import numpy as np
import pytest

from regvar.sparse import SparseMatrix, SparseVector


class TestSparseVector:
    def test_round_trip(self):
        x = np.array([0.0, 1.5, 0.0, -2.0])
        sv = SparseVector.from_dense(x)
        assert sv.nnz == 2
        assert np.array_equal(sv.to_dense(), x)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            SparseVector(dim=3, indices=[1, 0], values=[1.0, 2.0])

    def test_rejects_stored_zero(self):
        with pytest.raises(ValueError):
            SparseVector(dim=3, indices=[0], values=[0.0])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SparseVector(dim=2, indices=[2], values=[1.0])


class TestSparseMatrix:
    def test_round_trip(self, rng):
        m = rng.standard_normal((4, 5))
        m[np.abs(m) < 0.7] = 0.0
        sm = SparseMatrix.from_dense(m)
        assert np.array_equal(sm.to_dense(), m)
        assert sm.nnz == np.count_nonzero(m)

    def test_triplets_round_trip(self, rng):
        m = rng.standard_normal((3, 3))
        m[0, 1] = 0.0
        sm = SparseMatrix.from_dense(m)
        back = SparseMatrix.from_triplets(sm.shape, sm.to_triplets())
        assert np.array_equal(back.to_dense(), m * (m != 0))

    def test_identity_and_zeros(self):
        assert np.array_equal(SparseMatrix.identity(3).to_dense(), np.eye(3))
        assert SparseMatrix.zeros((2, 4)).nnz == 0

    def test_row_nnz(self):
        m = np.array([[1.0, 0.0], [2.0, 3.0]])
        assert SparseMatrix.from_dense(m).row_nnz().tolist() == [1, 2]

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            SparseMatrix(shape=(2, 2), rows=[0, 0], cols=[1, 1], values=[1.0, 2.0])
