import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dps import sampler
from dps.rng import RngHandle
from dps.sampler import LogitBank, SamplingPattern


# ---------------------------------------------------------------------------
# normalize_probs


def test_uniform_logits_give_uniform_probs():
    p = sampler.normalize_probs(np.zeros(4))
    assert np.allclose(p, 0.25)


def test_probs_match_direct_evaluation():
    p = sampler.normalize_probs(np.log([1.0, 2.0, 3.0, 4.0]))
    assert np.allclose(p, [0.1, 0.2, 0.3, 0.4], atol=1e-12)


def test_masked_index_gets_zero_probability():
    p = sampler.normalize_probs(np.zeros(4), mask=[0])
    assert p[0] == 0.0
    assert np.allclose(p[1:], 1 / 3)


def test_all_masked_rejected():
    with pytest.raises(ValueError):
        sampler.normalize_probs(np.zeros(3), mask=[0, 1, 2])


# ---------------------------------------------------------------------------
# hard sampling


def test_per_sample_selects_everything_when_m_equals_n(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 8, 8, rng.substream("b"))
    idx, _ = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0)
    assert sorted(idx[0].tolist()) == list(range(8))


def test_dominant_logit_always_wins(rng):
    values = np.zeros((1, 4))
    values[0, 0] = 50.0
    bank = LogitBank(sampler.PER_SAMPLE, values)
    idx, _ = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, batch=10_000)
    assert np.mean(idx[:, 0] == 0) > 0.999


def test_uniform_logits_sample_uniformly(rng):
    bank = LogitBank(sampler.PER_SAMPLE, np.zeros((1, 4)))
    idx, _ = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, batch=100_000)
    freqs = np.bincount(idx[:, 0], minlength=4) / idx.shape[0]
    assert np.abs(freqs - 0.25).max() < 0.02


def test_gumbel_max_matches_softmax_distribution(rng):
    logits = rng.substream("l").normal(8)
    bank = LogitBank(sampler.PER_SAMPLE, logits[None, :])
    idx, _ = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, batch=100_000)
    freqs = np.bincount(idx[:, 0], minlength=8) / idx.shape[0]
    tv = 0.5 * np.abs(freqs - sampler.normalize_probs(logits)).sum()
    assert tv < 0.02


def test_topm_full_selection():
    bank = LogitBank(sampler.TOP_M, np.zeros(6))
    idx, _ = sampler.sample_hard_topM(bank, RngHandle(0), 1.0, 6)
    assert sorted(idx[0].tolist()) == list(range(6))


def test_topm_m1_is_gumbel_max(rng):
    bank = LogitBank(sampler.TOP_M, np.zeros(8))
    idx, _ = sampler.sample_hard_topM(bank, rng.substream("g"), 1.0, 1, batch=100_000)
    freqs = np.bincount(idx[:, 0], minlength=8) / idx.shape[0]
    assert np.abs(freqs - 1 / 8).max() < 0.02


def test_topm_dominant_pair_selected(rng):
    values = np.zeros(6)
    values[[1, 4]] = 50.0
    bank = LogitBank(sampler.TOP_M, values)
    idx, _ = sampler.sample_hard_topM(bank, rng.substream("g"), 1.0, 2, batch=10_000)
    hits = np.mean([set(row) == {1, 4} for row in idx])
    assert hits > 0.999


def _exact_without_replacement_set_probs(logits, m):
    """Brute-force distribution over index sets for sequential sampling
    without replacement (oracle for the top-M equivalence)."""
    n = len(logits)
    probs = {}
    for perm in itertools.permutations(range(n), m):
        p = 1.0
        masked = []
        for i in perm:
            pi = sampler.normalize_probs(logits, mask=masked or None)
            p *= pi[i]
            masked.append(i)
        key = frozenset(perm)
        probs[key] = probs.get(key, 0.0) + p
    return probs


def test_topm_matches_without_replacement_enumeration(rng):
    logits = np.array([1.2, -0.3, 0.7, 0.0, -1.0])
    bank = LogitBank(sampler.TOP_M, logits)
    trials = 100_000
    idx, _ = sampler.sample_hard_topM(bank, rng.substream("g"), 1.0, 2, batch=trials)
    counts = {}
    for row in idx:
        key = frozenset(row.tolist())
        counts[key] = counts.get(key, 0) + 1
    exact = _exact_without_replacement_set_probs(logits, 2)
    tv = 0.5 * sum(abs(counts.get(k, 0) / trials - v) for k, v in exact.items())
    assert tv < 0.03


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 8))
def test_patterns_always_without_replacement(seed, m):
    r = RngHandle(seed)
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, m, 8, r.substream("b"))
    idx, _ = sampler.sample_hard_per_sample(bank, r.substream("g"), 1.0, batch=4)
    for row in idx:
        assert len(set(row.tolist())) == m
    bank2 = sampler.init_logit_bank(sampler.TOP_M, m, 8, r.substream("b2"))
    idx2, _ = sampler.sample_hard_topM(bank2, r.substream("g2"), 1.0, m, batch=4)
    for row in idx2:
        assert len(set(row.tolist())) == m


def test_m_larger_than_n_rejected(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 9, 8, rng)
    with pytest.raises(ValueError):
        sampler.sample_hard_per_sample(bank, rng, 1.0)
    bank2 = sampler.init_logit_bank(sampler.TOP_M, 8, 8, rng)
    with pytest.raises(ValueError):
        sampler.sample_hard_topM(bank2, rng, 1.0, 9)


# ---------------------------------------------------------------------------
# backward pass


def _soft_surrogate(tape, bank_values, noise, upstream):
    """sum(upstream * relaxed rows) as a function of the logits."""
    if tape.mode == sampler.PER_SAMPLE:
        keys = bank_values[None] + noise
    else:
        keys = bank_values[None, None, :] + noise
    t = sampler.SoftSampleTape(tape.mode, tape.tau, keys, tape.order)
    return float((t.soft_rows() * upstream).sum())


@pytest.mark.parametrize("tau", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("mode", [sampler.PER_SAMPLE, sampler.TOP_M])
def test_backward_matches_finite_differences(mode, tau, rng):
    m, n, batch = 3, 6, 2
    bank = sampler.init_logit_bank(mode, m, n, rng.substream("b"))
    if mode == sampler.PER_SAMPLE:
        _, tape = sampler.sample_hard_per_sample(bank, rng.substream("g"), tau, batch)
        noise = tape.keys - bank.values[None]
    else:
        _, tape = sampler.sample_hard_topM(bank, rng.substream("g"), tau, m, batch)
        noise = tape.keys - bank.values[None, None, :]
    upstream = rng.substream("u").normal((batch, m, n))
    grad = sampler.backward_logits(tape, upstream)
    eps = 1e-6
    fd = np.zeros_like(bank.values)
    for ii in np.ndindex(*bank.values.shape):
        v1 = bank.values.copy()
        v1[ii] += eps
        v0 = bank.values.copy()
        v0[ii] -= eps
        fd[ii] = (_soft_surrogate(tape, v1, noise, upstream) - _soft_surrogate(tape, v0, noise, upstream)) / (2 * eps)
    rel = np.abs(grad - fd).max() / np.abs(fd).max()
    assert rel < 1e-4


def test_backward_zero_upstream_gives_zero(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 2, 5, rng.substream("b"))
    _, tape = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, 3)
    grad = sampler.backward_logits(tape, np.zeros((3, 2, 5)))
    assert np.all(grad == 0)


def test_backward_flattens_with_large_tau(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 1, 3, rng.substream("b"))
    upstream = rng.substream("u").normal((1, 1, 3))
    norms = {}
    for tau in (0.5, 50.0):
        _, tape = sampler.sample_hard_per_sample(bank, rng.substream("g"), tau, 1)
        norms[tau] = np.linalg.norm(sampler.backward_logits(tape, upstream))
    assert norms[50.0] < norms[0.5] / 10


def test_backward_masked_entries_get_zero_gradient(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 4, 4, rng.substream("b"))
    idx, tape = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, 1)
    rows = tape.soft_rows()[0]
    # draw d has exactly the previously selected d indices at probability 0
    for d in range(4):
        assert np.all(rows[d, idx[0, :d]] == 0.0)


def test_backward_shape_mismatch_rejected(rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 2, 5, rng.substream("b"))
    _, tape = sampler.sample_hard_per_sample(bank, rng.substream("g"), 1.0, 3)
    with pytest.raises(ValueError):
        sampler.backward_logits(tape, np.zeros((3, 2, 4)))


# ---------------------------------------------------------------------------
# entropy penalty


def test_entropy_near_zero_for_peaked_logits():
    values = np.zeros((2, 8))
    values[:, 0] = 100.0
    h, _ = sampler.entropy_penalty(LogitBank(sampler.PER_SAMPLE, values))
    assert h < 1e-6


def test_entropy_max_for_uniform_logits():
    h, _ = sampler.entropy_penalty(LogitBank(sampler.PER_SAMPLE, np.zeros((1, 128))))
    assert abs(h - np.log(128)) < 1e-12


def test_entropy_gradient_matches_finite_differences(rng):
    values = rng.normal((3, 7))
    bank = LogitBank(sampler.PER_SAMPLE, values)
    _, grad = sampler.entropy_penalty(bank)
    eps = 1e-6
    for ii in np.ndindex(3, 7):
        v1 = values.copy()
        v1[ii] += eps
        v0 = values.copy()
        v0[ii] -= eps
        fd = (
            sampler.entropy_penalty(LogitBank(sampler.PER_SAMPLE, v1))[0]
            - sampler.entropy_penalty(LogitBank(sampler.PER_SAMPLE, v0))[0]
        ) / (2 * eps)
        assert abs(grad[ii] - fd) / max(abs(fd), 1e-8) < 1e-6


def test_entropy_rejected_in_topm_mode():
    with pytest.raises(ValueError):
        sampler.entropy_penalty(LogitBank(sampler.TOP_M, np.zeros(8)))


# ---------------------------------------------------------------------------
# apply / adjoint


def test_apply_gathers():
    pat = SamplingPattern([0, 2], 4)
    assert np.array_equal(sampler.apply_pattern(pat, np.array([1.0, 2, 3, 4])), [1.0, 3.0])


def test_apply_identity_when_full():
    pat = SamplingPattern(np.arange(4), 4)
    x = np.arange(4) + 1j
    assert np.array_equal(sampler.apply_pattern(pat, x), x)


def test_adjoint_scatters():
    pat = SamplingPattern([0, 2], 4)
    assert np.array_equal(sampler.adjoint_apply(pat, np.array([1.0, 3.0])), [1, 0, 3, 0])


def test_adjoint_is_true_adjoint(rng):
    pat = SamplingPattern([1, 3, 4], 8)
    x = rng.normal(8) + 1j * rng.normal(8)
    y = rng.normal(3) + 1j * rng.normal(3)
    lhs = np.vdot(y, sampler.apply_pattern(pat, x))
    rhs = np.vdot(sampler.adjoint_apply(pat, y), x)
    assert abs(lhs - rhs) < 1e-12


def test_projector_idempotent(rng):
    pat = SamplingPattern([0, 5, 6], 8)
    x = rng.normal(8)
    proj = sampler.adjoint_apply(pat, sampler.apply_pattern(pat, x))
    proj2 = sampler.adjoint_apply(pat, sampler.apply_pattern(pat, proj))
    assert np.array_equal(proj, proj2)


def test_pattern_duplicate_indices_rejected():
    with pytest.raises(ValueError):
        SamplingPattern([1, 1, 2], 4)


# ---------------------------------------------------------------------------
# fixed patterns and export


def test_lowpass_1d_smallest_frequencies():
    pat = sampler.fixed_pattern("low-pass", 8, 3)
    assert set(pat.indices.tolist()) == {0, 1, 7}


def test_lowpass_2d_m1_is_dc():
    pat = sampler.fixed_pattern("low-pass", (4, 4), 1)
    assert pat.indices.tolist() == [0]


def test_uniform_random_distinct_and_reproducible():
    a = sampler.fixed_pattern("uniform-random", 64, 16, RngHandle(5))
    b = sampler.fixed_pattern("uniform-random", 64, 16, RngHandle(5))
    assert len(set(a.indices.tolist())) == 16
    assert np.array_equal(a.indices, b.indices)


def test_pattern_export_round_trip(tmp_path):
    pat = SamplingPattern([3, 1, 7], 16)
    path = tmp_path / "pattern.txt"
    sampler.save_pattern(path, pat, "top-m")
    text = path.read_text().splitlines()
    assert text[0] == "N=16 M=3 mode=top-m"
    assert len(text) == 4
    back = sampler.load_pattern(path)
    assert np.array_equal(back.indices, pat.indices)
    assert back.n == 16


def test_logits_csv_dimensions(tmp_path, rng):
    bank = sampler.init_logit_bank(sampler.PER_SAMPLE, 4, 16, rng)
    path = tmp_path / "logits.csv"
    sampler.save_logits_csv(path, bank)
    data = np.loadtxt(path, delimiter=",")
    assert data.shape == (4, 16)
    assert np.allclose(data, bank.values)
