"""Reward components: ZPD reference, kernel/length/diversity scores, diagnostics."""

import math

import numpy as np
import pytest

from pathopt.rewards import (
    LengthConstraint,
    RewardVector,
    ZpdReference,
    ZpdSupportError,
    compose_group_rewards,
    compose_reward_vector,
    div_path,
    estimate_zpd_reference,
    len_score,
    ngram_jaccard,
    score_diversity,
    score_length,
    score_zpd,
)
from pathopt.simulator import Concept, ConceptCatalog

TOL = 1e-9


def catalog_with(difficulties) -> ConceptCatalog:
    return ConceptCatalog(
        concepts=tuple(Concept(id=i, difficulty=float(d)) for i, d in enumerate(difficulties)),
        target_set=tuple(range(len(difficulties))),
    )


def flat_ref(z: float, sigma: float = 0.1, bins: int = 1) -> ZpdReference:
    return ZpdReference(num_bins=bins, z=(z,) * bins, sigma=sigma, support=(1,) * bins)


# --- estimate_zpd_reference ---


def test_zpd_estimate_single_bin_mean():
    cat = catalog_with([0.2, 0.4])
    ref = estimate_zpd_reference([(0.5, (0, 1), 0.95)], cat, sigma=0.1, num_bins=1)
    assert ref.z[0] == pytest.approx(0.3, abs=TOL)
    assert ref.support == (1,)


def test_zpd_estimate_threshold_is_strict():
    cat = catalog_with([0.2, 0.4])
    with pytest.raises(ZpdSupportError, match="insufficient high-outcome support"):
        estimate_zpd_reference([(0.5, (0, 1), 0.9)], cat, num_bins=1)


def test_zpd_estimate_constant_difficulty():
    cat = catalog_with([0.5, 0.5, 0.5])
    trajs = [(a, (0, 1, 2), 0.99) for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
    ref = estimate_zpd_reference(trajs, cat, num_bins=5)
    assert all(z == pytest.approx(0.5, abs=TOL) for z in ref.z)
    assert ref.support == (1, 1, 1, 1, 1)


def test_zpd_estimate_interpolates_empty_bins():
    cat = catalog_with([0.2, 0.8])
    trajs = [(0.1, (0,), 0.95), (0.9, (1,), 0.95)]
    ref = estimate_zpd_reference(trajs, cat, num_bins=5)
    assert ref.support == (1, 0, 0, 0, 1)
    # linear in the bin centers between z(0.1)=0.2 and z(0.9)=0.8
    assert list(ref.z) == pytest.approx([0.2, 0.35, 0.5, 0.65, 0.8], abs=TOL)


def test_zpd_estimate_mixes_qualifying_only():
    cat = catalog_with([0.2, 0.4, 0.9])
    trajs = [
        (0.5, (0, 1), 0.95),  # qualifies
        (0.5, (2, 2), 0.5),  # filtered by outcome
    ]
    ref = estimate_zpd_reference(trajs, cat, num_bins=1)
    assert ref.z[0] == pytest.approx(0.3, abs=TOL)


def test_zpd_reference_round_trip(tmp_path):
    ref = ZpdReference(num_bins=3, z=(0.2, 0.5, 0.7), sigma=0.1, support=(4, 0, 2))
    p = str(tmp_path / "ref.json")
    ref.save(p)
    back = ZpdReference.load(p)
    assert back == ref


def test_zpd_reference_validation():
    with pytest.raises(ValueError):
        ZpdReference(num_bins=2, z=(0.5,), sigma=0.1, support=(1, 1))
    with pytest.raises(ValueError):
        ZpdReference(num_bins=1, z=(0.5,), sigma=0.0, support=(1,))


# --- score_zpd ---


def test_score_zpd_peak():
    cat = catalog_with([0.4, 0.4])
    assert score_zpd((0, 1, 0), cat, 0.5, flat_ref(0.4)) == pytest.approx(1.0, abs=TOL)


def test_score_zpd_one_sigma_off():
    cat = catalog_with([0.5])
    ref = flat_ref(0.4, sigma=0.1)
    assert score_zpd((0,), cat, 0.5, ref) == pytest.approx(math.exp(-0.5), abs=TOL)


def test_score_zpd_two_step_mean():
    cat = catalog_with([0.4, 0.5])
    ref = flat_ref(0.4, sigma=0.1)
    expect = (1.0 + math.exp(-0.5)) / 2.0
    assert score_zpd((0, 1), cat, 0.5, ref) == pytest.approx(expect, abs=TOL)


def test_score_zpd_permutation_invariant():
    cat = catalog_with(np.linspace(0.1, 0.9, 6))
    ref = flat_ref(0.45)
    path = (0, 3, 5, 1, 3)
    rng = np.random.default_rng(0)
    base = score_zpd(path, cat, 0.5, ref)
    for _ in range(5):
        perm = tuple(rng.permutation(path))
        assert score_zpd(perm, cat, 0.5, ref) == pytest.approx(base, abs=TOL)


def test_score_zpd_rejects_empty():
    with pytest.raises(ValueError):
        score_zpd((), catalog_with([0.5]), 0.5, flat_ref(0.5))


def test_score_zpd_uses_proficiency_bin():
    ref = ZpdReference(num_bins=2, z=(0.2, 0.8), sigma=0.1, support=(1, 1))
    cat = catalog_with([0.2, 0.8])
    assert score_zpd((0,), cat, 0.25, ref) == pytest.approx(1.0, abs=TOL)
    assert score_zpd((1,), cat, 0.75, ref) == pytest.approx(1.0, abs=TOL)


# --- score_length ---


def test_score_length_in_band():
    lc = LengthConstraint(target=10, tolerance=1, penalty=0.1)
    assert score_length(list(range(10)), lc) == 1.0
    assert score_length(list(range(11)), lc) == 1.0  # delta == tolerance
    assert score_length(list(range(9)), lc) == 1.0


def test_score_length_hand_value():
    lc = LengthConstraint(target=10, tolerance=1, penalty=0.1)
    assert score_length(list(range(14)), lc) == pytest.approx(-0.3, abs=TOL)


def test_score_length_strictly_decreasing_outside_band():
    lc = LengthConstraint(target=10)
    scores = [score_length(list(range(n)), lc) for n in range(12, 20)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_length_constraint_validation():
    with pytest.raises(ValueError):
        LengthConstraint(target=0)
    with pytest.raises(ValueError):
        LengthConstraint(target=5, tolerance=-1)


# --- ngram_jaccard ---


def test_jaccard_identical():
    assert ngram_jaccard((1, 2, 3), (1, 2, 3), n=2) == 1.0


def test_jaccard_hand_value():
    # grams {12, 23} vs {12, 24}: one shared of three
    assert ngram_jaccard((1, 2, 3), (1, 2, 4), n=2) == pytest.approx(1 / 3, abs=TOL)


def test_jaccard_disjoint():
    assert ngram_jaccard((1, 2), (3, 4), n=2) == 0.0


def test_jaccard_empty_gram_convention():
    # both paths too short for any bigram: treated as identical
    assert ngram_jaccard((1,), (2,), n=2) == 1.0


def test_jaccard_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = tuple(rng.integers(0, 6, size=rng.integers(1, 8)))
        b = tuple(rng.integers(0, 6, size=rng.integers(1, 8)))
        j1, j2 = ngram_jaccard(a, b), ngram_jaccard(b, a)
        assert j1 == j2
        assert 0.0 <= j1 <= 1.0
        grams = lambda p: {tuple(p[i : i + 2]) for i in range(len(p) - 1)}
        assert (j1 == 1.0) == (grams(a) == grams(b))


# --- score_diversity ---


def test_diversity_identical_group():
    group = [(1, 2, 3)] * 4
    for i in range(4):
        assert score_diversity(i, group) == 0.0


def test_diversity_disjoint_group():
    group = [(0, 1), (2, 3), (4, 5)]
    for i in range(3):
        assert score_diversity(i, group) == 1.0


def test_diversity_hand_value():
    # path 0 overlaps path 1 at Jaccard 1/3 and path 2 at 0
    group = [(1, 2, 3), (1, 2, 4), (7, 8, 9)]
    assert score_diversity(0, group) == pytest.approx(5 / 6, abs=TOL)


def test_diversity_singleton_group():
    assert score_diversity(0, [(1, 2, 3)]) == 1.0


def test_diversity_index_checked():
    with pytest.raises(ValueError):
        score_diversity(2, [(1,), (2,)])


def test_diversity_copying_weakly_hurts_both():
    rng = np.random.default_rng(7)
    for _ in range(20):
        group = [tuple(rng.integers(0, 5, size=4)) for _ in range(4)]
        i, j = 0, 2
        before_i = score_diversity(i, group)
        before_j = score_diversity(j, group)
        copied = list(group)
        copied[j] = group[i]
        assert score_diversity(i, copied) <= before_i + TOL
        assert score_diversity(j, copied) <= before_j + TOL


# --- composition ---


def test_reward_vector_order():
    v = RewardVector(e_p=0.1, s_zpd=0.2, r_len=0.3, d_div=0.4)
    assert np.array_equal(v.to_array(), np.array([0.1, 0.2, 0.3, 0.4]))


def test_compose_perfect_path():
    cat = catalog_with([0.4] * 3)
    ref = flat_ref(0.4)
    lc = LengthConstraint(target=3)
    # gram sets (0,1),(1,2) vs (1,0),(0,0) are disjoint
    group = [(0, 1, 2), (1, 0, 0)]
    v = compose_reward_vector((0, 1, 2), 1.0, 0.5, cat, ref, lc, group, 0)
    assert v.e_p == 1.0
    assert v.s_zpd == pytest.approx(1.0, abs=TOL)
    assert v.r_len == 1.0
    assert v.d_div == 1.0


def test_compose_mixed_case_matches_components():
    cat = catalog_with([0.4, 0.5, 0.7])
    ref = flat_ref(0.4)
    lc = LengthConstraint(target=2)
    group = [(0, 1), (0, 1, 2), (2, 2)]
    e_ps = [0.3, 0.6, 0.1]
    vecs = compose_group_rewards(group, e_ps, 0.5, cat, ref, lc)
    for i, v in enumerate(vecs):
        assert v.e_p == e_ps[i]
        assert v.s_zpd == pytest.approx(score_zpd(group[i], cat, 0.5, ref), abs=TOL)
        assert v.r_len == pytest.approx(score_length(group[i], lc), abs=TOL)
        assert v.d_div == pytest.approx(score_diversity(i, group), abs=TOL)


def test_compose_group_length_mismatch():
    cat = catalog_with([0.4])
    with pytest.raises(ValueError):
        compose_group_rewards([(0,)], [0.1, 0.2], 0.5, cat, flat_ref(0.4), LengthConstraint(target=1))


# --- evaluation diagnostics ---


def test_len_score_values():
    assert len_score(list(range(10)), 10) == 1.0
    assert len_score(list(range(15)), 10) == pytest.approx(0.5, abs=TOL)
    assert len_score(list(range(20)), 10) == 0.0
    assert len_score(list(range(25)), 10) == 0.0


def test_div_path_values():
    assert div_path((0, 1, 2, 3)) == 1.0
    assert div_path((1, 1, 2, 2, 3)) == pytest.approx(0.6, abs=TOL)
    assert div_path((4,) * 10) == pytest.approx(0.1, abs=TOL)
    with pytest.raises(ValueError):
        div_path(())
