import itertools

import numpy as np
import pytest

from src.data.oracles import (
    enumerate_legal_sequences,
    oracle_best_boundaries,
    oracle_exhaustive_map,
)
from src.engine.scv import log_posterior, scv_decode, viterbi_map
from src.errors import OracleGuardError
from src.models.segmentation import Segmentation


def test_oracle_refuses_large_instances(make_cache, make_hmm, rng):
    with pytest.raises(OracleGuardError):
        oracle_exhaustive_map(make_cache(rng.normal(size=(4, 15))), make_hmm(rng, 4), {0, 1})
    with pytest.raises(OracleGuardError):
        oracle_exhaustive_map(make_cache(rng.normal(size=(4, 5))), make_hmm(rng, 4), {0, 1, 2, 3})


def test_oracle_score_matches_log_posterior(make_cache, make_hmm, rng):
    cache, params = make_cache(rng.normal(size=(3, 7))), make_hmm(rng, 3)
    seg, score = oracle_exhaustive_map(cache, params, {0, 2})
    assert score == pytest.approx(log_posterior(seg, cache, params), abs=1e-9)


def test_oracle_without_cover_matches_viterbi(make_cache, make_hmm, rng):
    cache, params = make_cache(rng.normal(size=(3, 9)) * 2), make_hmm(rng, 3)
    seg, _ = oracle_exhaustive_map(cache, params, {0, 1, 2})
    assert seg == viterbi_map(cache, params, {0, 1, 2})


def test_oracle_forced_cover_is_best_permutation(make_cache, make_hmm, rng):
    cache, params = make_cache(rng.normal(size=(3, 3))), make_hmm(rng, 3)
    seg, score = oracle_exhaustive_map(cache, params, {0, 1, 2}, cover_required=True)
    best = max(
        log_posterior(Segmentation(tuple((c, 1) for c in order)), cache, params)
        for order in itertools.permutations(range(3))
    )
    assert seg.lengths == [1, 1, 1]
    assert score == pytest.approx(best, abs=1e-12)


def test_oracle_bounds_scv(make_cache, make_hmm):
    for seed in range(30):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(3, 9))
        cache, params = make_cache(rng.normal(size=(3, T)) * 2, rng=rng), make_hmm(rng, 3)
        _, oracle = oracle_exhaustive_map(cache, params, {0, 1, 2}, cover_required=True)
        assert oracle >= log_posterior(scv_decode(cache, params, {0, 1, 2}), cache, params) - 1e-9


def test_best_boundaries_single_segment(make_cache, make_hmm, rng):
    seg, _ = oracle_best_boundaries([2], make_cache(rng.normal(size=(3, 5))), make_hmm(rng, 3))
    assert seg.segments == ((2, 5),)


def test_enumerate_legal_sequences(flat_hmm):
    params = flat_hmm(2, 10.0)
    assert sorted(enumerate_legal_sequences({0, 1}, 25, params)) == [(0, 1), (1, 0)]
    assert enumerate_legal_sequences({0, 1}, 15, params) == []
    everything = enumerate_legal_sequences({0, 1}, 35, params, terminal_only=False)
    assert sorted(everything) == [(0, 1), (0, 1, 0), (1, 0), (1, 0, 1)]
