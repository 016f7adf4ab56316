from __future__ import annotations

import math
from itertools import combinations

import numpy as np
import pytest
from scipy.special import gammaln

from degsim.errors import FormatError, ValidationError
from degsim.ggd import NEG_INF, make_ggd
from degsim.similarity import (
    SimilarityMatrix,
    build_similarity_matrix,
    group_stats,
    load_matrix,
    save_matrix,
)


def kl_reference(ap, bp, aq, bq):
    """Independent restatement of the closed-form divergence (scipy gammaln)."""
    return (
        math.log((ap * bq) / (aq * bp))
        + gammaln(1.0 / aq)
        - gammaln(1.0 / ap)
        + (bp / bq) ** aq * math.exp(gammaln((aq + 1.0) / ap) - gammaln(1.0 / ap))
        - 1.0 / ap
    )


def sym_log_reference(p, q):
    fwd = kl_reference(p.alpha, p.beta, q.alpha, q.beta)
    rev = kl_reference(q.alpha, q.beta, p.alpha, p.beta)
    return math.log(0.5 * (fwd + rev))


def _matrix_from_values(labels, values):
    n = len(labels)
    dist = np.full((n, n), NEG_INF)
    for (i, j), v in values.items():
        dist[i, j] = dist[j, i] = v
    fits = {lab: make_ggd(2.0, 1.0 + k) for k, lab in enumerate(labels)}
    return SimilarityMatrix(labels=list(labels), distances=dist, fits=fits, degenerate_pairs=[])


class TestBuildMatrix:
    def test_identical_fits_flagged_degenerate(self):
        fits = {"a": make_ggd(2.0, 1.0), "b": make_ggd(2.0, 1.0)}
        matrix = build_similarity_matrix(fits)
        assert matrix.pair("a", "b") == NEG_INF
        assert ("a", "b") in matrix.degenerate_pairs

    def test_matches_hand_combined_closed_forms(self):
        fits = {"x": make_ggd(2.0, 1.0), "y": make_ggd(2.0, 2.0), "z": make_ggd(1.0, 1.0)}
        matrix = build_similarity_matrix(fits)
        for a, b in combinations(fits, 2):
            expected = sym_log_reference(fits[a], fits[b])
            assert abs(matrix.pair(a, b) - expected) < 1e-9

    def test_permutation_equivariance(self):
        fits = {"x": make_ggd(0.7, 1.0), "y": make_ggd(2.0, 2.0), "z": make_ggd(4.0, 0.5)}
        m1 = build_similarity_matrix(fits)
        m2 = build_similarity_matrix({k: fits[k] for k in ["z", "x", "y"]})
        for a, b in combinations(fits, 2):
            assert m1.pair(a, b) == m2.pair(a, b)

    def test_symmetry_and_diagonal(self):
        fits = {f"d{i}": make_ggd(0.5 + i, 1.0 + i) for i in range(5)}
        m = build_similarity_matrix(fits)
        assert np.array_equal(m.distances, m.distances.T)
        assert all(m.distances[i, i] == NEG_INF for i in range(5))

    def test_needs_two_degradations(self):
        with pytest.raises(ValidationError):
            build_similarity_matrix({"solo": make_ggd(2.0, 1.0)})

    def test_monotone_in_scale_ratio_at_fixed_shape(self):
        # Gaussian-case KL grows with the sigma ratio, so distances must too.
        fits = {f"s{i}": make_ggd(2.0, sigma) for i, sigma in enumerate([1.0, 1.5, 2.5, 4.0])}
        m = build_similarity_matrix(fits)
        base = list(fits)
        gaps = [m.pair(base[0], other) for other in base[1:]]
        assert gaps == sorted(gaps)


class TestGroupStats:
    def test_pair_group(self):
        m = _matrix_from_values(["a", "b", "c"], {(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0})
        stats = group_stats(m, ["a", "b"])
        assert stats.mean_distance == 1.0
        assert stats.variance == 0.0
        assert stats.pair_count == 1

    def test_triple_arithmetic(self):
        m = _matrix_from_values(["a", "b", "c"], {(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0})
        stats = group_stats(m, ["a", "b", "c"])
        assert abs(stats.mean_distance - 2.0) < 1e-12
        assert abs(stats.variance - 2.0 / 3.0) < 1e-12

    def test_full_set_matches_pair_enumeration(self, rng):
        labels = [f"d{i}" for i in range(6)]
        values = {(i, j): float(rng.uniform(0, 5)) for i, j in combinations(range(6), 2)}
        m = _matrix_from_values(labels, values)
        stats = group_stats(m, labels)
        pairs = list(values.values())
        mean = sum(pairs) / len(pairs)
        var = sum((v - mean) ** 2 for v in pairs) / len(pairs)
        assert abs(stats.mean_distance - mean) < 1e-12
        assert abs(stats.variance - var) < 1e-12

    def test_unknown_label(self):
        m = _matrix_from_values(["a", "b"], {(0, 1): 1.0})
        with pytest.raises(ValidationError):
            group_stats(m, ["a", "nope"])

    def test_singleton_rejected(self):
        m = _matrix_from_values(["a", "b"], {(0, 1): 1.0})
        with pytest.raises(ValidationError):
            group_stats(m, ["a"])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        fits = {"x": make_ggd(0.9, 1.1), "y": make_ggd(2.0, 2.0), "z": make_ggd(2.0, 2.0)}
        matrix = build_similarity_matrix(fits)
        path = tmp_path / "matrix.json"
        save_matrix(matrix, path)
        back = load_matrix(path)
        assert back.labels == matrix.labels
        assert np.array_equal(back.distances, matrix.distances)  # includes -inf sentinel
        assert back.degenerate_pairs == [("y", "z")]
        for label in fits:
            assert back.fits[label].alpha == pytest.approx(fits[label].alpha)

    def test_rejects_asymmetric_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(
            '{"labels": ["a", "b"], "distances": [[null, 1.0], [2.0, null]],'
            ' "fits": {"a": {"alpha": 2, "sigma": 1}, "b": {"alpha": 2, "sigma": 2}}}'
        )
        with pytest.raises(FormatError):
            load_matrix(path)
