import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famviz.boaw import (
    Codebook,
    assign_words,
    expected_windows,
    frames_per_window,
    kmeans_fit,
    read_codebook,
    read_histograms_csv,
    soft_assign,
    sq_distances,
    window_histograms,
    write_codebook,
    write_histograms_csv,
)
from famviz.errors import DimensionMismatchError, InsufficientDataError, MalformedInputError
from famviz.frames import FrameSequence
from famviz.timeline import FrameGrid, LabelSpan, SpeakerTier as T, VocalClass as V

from oracles import exhaustive_kmeans_inertia


def frames_from(vectors, family_id="fam"):
    return FrameSequence(FrameGrid(2.0, 0.2), np.asarray(vectors, dtype=np.float32), family_id=family_id)


# -- k-means -----------------------------------------------------------------

def test_kmeans_two_pairs():
    book = kmeans_fit(np.array([[0.0], [1.0], [10.0], [11.0]]), 2, seed=0)
    assert sorted(book.centroids[:, 0].tolist()) == [0.5, 10.5]
    assert book.inertia == 1.0


def test_kmeans_n_equals_k():
    X = np.array([[0.0, 1.0], [3.0, -2.0], [5.0, 5.0]])
    book = kmeans_fit(X, 3, seed=4)
    assert book.inertia == 0.0
    assert sorted(map(tuple, book.centroids)) == sorted(map(tuple, X))


def test_kmeans_identical_points():
    book = kmeans_fit(np.full((6, 2), 3.0), 2, seed=1)
    assert book.inertia == 0.0
    assert np.all(book.centroids == 3.0)


def test_kmeans_errors():
    with pytest.raises(InsufficientDataError):
        kmeans_fit(np.zeros((2, 2)), 3)
    with pytest.raises(MalformedInputError):
        kmeans_fit(np.array([[np.inf, 0.0]]), 1)


def test_kmeans_seeded_and_bounded():
    X = np.random.default_rng(3).normal(size=(300, 4))
    a, b = kmeans_fit(X, 6, seed=11), kmeans_fit(X, 6, seed=11)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert kmeans_fit(X, 6, seed=11, max_iters=2).n_iters_run <= 2


def test_empty_cluster_reseeded_to_farthest():
    from famviz.boaw import _update
    X = np.array([[0.0], [1.0], [9.0]])
    C = np.array([[0.5], [100.0]])
    new = _update(X, np.array([0, 0, 0]), C)
    assert new[1, 0] == 9.0


def test_transfer_escapes_lloyd_fixed_point():
    # {-1.34} | {1.81, 4.40, 4.93} is a Lloyd fixed point; moving 1.81 is better
    X = np.array([[1.80573556], [4.93471832], [4.40252808], [-1.34168422]])
    stuck = kmeans_fit(X, 2, seed=0, refine=False)
    fit = kmeans_fit(X, 2, seed=0)
    assert stuck.inertia == pytest.approx(5.605696995, abs=1e-8)
    assert fit.inertia == pytest.approx(exhaustive_kmeans_inertia(X, 2), abs=1e-12)
    assert sorted(fit.centroids.ravel()) == pytest.approx([0.23202566716, 4.66862320036])


def test_sq_distances_matches_direct():
    rng = np.random.default_rng(0)
    X, C = rng.normal(size=(40, 3)), rng.normal(size=(7, 3))
    direct = ((X[:, None, :] - C[None]) ** 2).sum(-1)
    assert np.allclose(sq_distances(X, C, chunk=9), direct, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kmeans_small_instances_reach_optimum(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    X = rng.normal(size=(int(rng.integers(k, 8)), int(rng.integers(1, 3))))
    best = min(kmeans_fit(X, k, seed=s).inertia for s in range(10))
    assert best == pytest.approx(exhaustive_kmeans_inertia(X, k), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_kmeans_history_non_increasing(seed, k):
    X = np.random.default_rng(seed).normal(size=(60, 3))
    h = kmeans_fit(X, k, seed=seed).inertia_history
    assert all(b <= a for a, b in zip(h, h[1:]))


# -- soft assignment ------------------------------------------------------------

def test_soft_assign_examples():
    book = Codebook(np.arange(7, dtype=float)[:, None])
    assert soft_assign([0.1], book) == [(i, 1.0) for i in range(5)]
    small = Codebook(np.arange(5, dtype=float)[:, None])
    assert sorted(i for i, _ in soft_assign([2.7], small)) == [0, 1, 2, 3, 4]
    big = Codebook(np.random.default_rng(0).normal(size=(50, 3)))
    assert 3 in {i for i, _ in soft_assign(big.centroids[3], big)}


def test_ties_go_to_lower_index():
    book = Codebook(np.array([[1.0], [-1.0], [1.0], [-1.0]]))
    assert [i for i, _ in soft_assign([0.0], book, n_assign=2)] == [0, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_assignment_size_and_permutation(seed, n_assign):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(10, 2))
    v = rng.normal(size=2)
    out = soft_assign(v, Codebook(C), n_assign)
    assert len(out) == n_assign and len({i for i, _ in out}) == n_assign
    perm = rng.permutation(10)
    moved = soft_assign(v, Codebook(C[perm]), n_assign)
    assert {int(perm[i]) for i, _ in moved} == {i for i, _ in out}


def test_assign_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        assign_words(np.zeros((2, 3)), Codebook(np.zeros((5, 2))))


# -- windows -------------------------------------------------------------------

def test_single_frame_window_uniform():
    book = Codebook(np.random.default_rng(1).normal(size=(5, 2)))
    seq = frames_from(np.zeros((1, 2)))
    (h,) = window_histograms(seq, book, window_len=0.2)
    assert np.allclose(h.tf, 0.2, atol=1e-15)


def test_window_at_centroid_has_five_words():
    book = Codebook(np.random.default_rng(2).normal(size=(50, 4)))
    seq = frames_from(np.tile(book.centroids[0], (150, 1)))
    (h,) = window_histograms(seq, book)
    nz = h.tf[h.tf > 0]
    assert len(nz) == 5 and np.allclose(nz, 0.2, atol=1e-15)
    assert h.tf[0] > 0 and h.mass == 750 and h.n_frames == 150


def test_partial_window_dropped_and_offsets():
    book = Codebook(np.eye(3))
    seq = frames_from(np.random.default_rng(0).normal(size=(320, 3)))
    hists = window_histograms(seq, book, n_assign=2)
    assert [h.window_start for h in hists] == [0.0, 30.0]
    assert len(hists) == expected_windows(320, 0.2, 30.0) == 2


def test_composition_from_timeline():
    book = Codebook(np.eye(3))
    seq = frames_from(np.zeros((150, 3)))
    (h,) = window_histograms(seq, book, n_assign=1, timeline=[LabelSpan(5, 8, T.CHN, V.CRY)])
    assert h.composition[(T.CHN, V.CRY)] == pytest.approx(0.1)
    assert h.total_voc_fraction == pytest.approx(0.1)


def test_frames_per_window_requires_multiple():
    assert frames_per_window(0.2, 30.0) == 150
    with pytest.raises(MalformedInputError):
        frames_per_window(0.2, 30.1)


def test_histogram_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        window_histograms(frames_from(np.zeros((150, 2))), Codebook(np.zeros((5, 3))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 800), st.integers(1, 6))
def test_histograms_normalized(seed, n, n_assign):
    rng = np.random.default_rng(seed)
    book = Codebook(rng.normal(size=(8, 3)))
    hists = window_histograms(frames_from(rng.normal(size=(n, 3))), book, n_assign=n_assign)
    assert len(hists) == n // 150
    for h in hists:
        assert abs(h.tf.sum() - 1.0) <= 1e-9 and np.all(h.tf >= 0)
        assert h.mass == n_assign * 150


# -- files -------------------------------------------------------------------

def test_codebook_csv_round_trip(tmp_path):
    book = kmeans_fit(np.random.default_rng(0).normal(size=(40, 3)), 4, seed=2)
    write_codebook(book, tmp_path / "cb.csv")
    back = read_codebook(tmp_path / "cb.csv")
    assert back.centroids.tobytes() == book.centroids.tobytes()
    assert back.inertia == book.inertia and back.seed == 2


def test_histogram_csv_round_trip(tmp_path):
    book = Codebook(np.random.default_rng(0).normal(size=(6, 2)))
    seq = frames_from(np.random.default_rng(1).normal(size=(300, 2)))
    hists = window_histograms(seq, book, timeline=[LabelSpan(1, 40, T.FAN, V.CDS)])
    write_histograms_csv(hists, tmp_path / "h.csv")
    back = read_histograms_csv(tmp_path / "h.csv")
    assert len(back) == 2
    for a, b in zip(hists, back):
        assert a.tf.tobytes() == b.tf.tobytes()
        assert a.composition == b.composition
        assert (a.family_id, a.window_start, a.mass) == (b.family_id, b.window_start, b.mass)
