"""Correlation scoring and frequency decisions against the projection oracle."""
import numpy as np
import pytest

import oracles as orc
from biogap import ssvep
from biogap.errors import ConfigurationError, ValidationError
from biogap.frames import EEG
from biogap.synth import SsvepSpec, SynthSpec, ssvep_protocol, synthesize


def eeg_record(freq=11.5, snr=0.0, seed=0, duration=4.0, fs=250.0, n_ch=4):
    return synthesize(SynthSpec(seed=seed, duration=duration, sample_rate=fs,
                                modalities={EEG},
                                eeg=SsvepSpec(freq, snr, n_ch))).modality(EEG)


# ---------------------------------------------------------------------------
# cca against exhaustive search

def test_cca_matches_exhaustive_projection_search():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(12, 65))
        x = rng.normal(size=(2, n))
        y = rng.normal(size=(2, n))
        # add shared structure on some trials so high and low rho both occur
        if trial % 2:
            y = y + rng.normal() * np.vstack([x[0], x[0]])
        got = ssvep.cca(x, y)
        want = orc.cca_exhaustive_2x2(x, y)
        assert abs(got - want) < 1e-3, (trial, got, want)


def test_cca_bounds():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 100))
    y = rng.normal(size=(4, 100))
    assert 0.0 <= ssvep.cca(x, y) <= 1.0


def test_cca_perfect_linear_relation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 50))
    y = np.array([[1.0, 2.0], [0.5, -1.0]]) @ x
    assert ssvep.cca(x, y) == pytest.approx(1.0, abs=1e-6)


def test_cca_invariant_under_channel_mixing():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 200))
    y = rng.normal(size=(3, 200)) + 0.4 * x[:3]
    base = ssvep.cca(x, y)
    for _ in range(5):
        mx = rng.normal(size=(4, 4))
        my = rng.normal(size=(3, 3))
        while abs(np.linalg.det(mx)) < 1e-3:
            mx = rng.normal(size=(4, 4))
        while abs(np.linalg.det(my)) < 1e-3:
            my = rng.normal(size=(3, 3))
        assert abs(ssvep.cca(mx @ x, my @ y) - base) < 1e-6


def test_cca_rejects_mismatched_lengths_and_short_blocks():
    with pytest.raises(ValidationError):
        ssvep.cca(np.zeros((2, 10)), np.zeros((2, 11)))
    with pytest.raises(ValidationError):
        ssvep.cca(np.zeros((4, 6)), np.zeros((4, 6)))


def test_cca_degenerate_input_scores_zero():
    x = np.zeros((2, 100))
    y = np.random.default_rng(0).normal(size=(2, 100))
    assert ssvep.cca(x, y) == 0.0


# ---------------------------------------------------------------------------
# references and normalized scores

def test_reference_set_shape_and_orthogonality():
    refs = ssvep.reference_set(10.0, 500, 250.0, n_harmonics=2)
    assert refs.shape == (4, 500)
    gram = refs @ refs.T / 500
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 0.01


def test_reference_set_rejects_nyquist_violation():
    with pytest.raises(ConfigurationError):
        ssvep.reference_set(70.0, 500, 250.0, n_harmonics=2)
    with pytest.raises(ConfigurationError):
        ssvep.reference_set(0.0, 500, 250.0)


def test_ncca_target_above_one_on_stimulus():
    x = eeg_record(freq=11.5, snr=3.0, seed=4)
    score = ssvep.ncca(x, 11.5, 250.0)
    assert score.ncca > 1.1
    assert not score.degenerate and not score.one_sided


def test_ncca_scale_invariant():
    x = eeg_record(freq=13.5, snr=0.0, seed=5)
    a = ssvep.ncca(x, 13.5, 250.0)
    b = ssvep.ncca(1e4 * x, 13.5, 250.0)
    assert a.ncca == pytest.approx(b.ncca, rel=1e-9)
    assert a.cca == pytest.approx(b.cca, rel=1e-9)


def test_ncca_one_sided_near_band_edge():
    x = np.random.default_rng(6).normal(size=(2, 1000))
    # upper side frequency's 2nd harmonic would cross Nyquist
    score = ssvep.ncca(x, 62.45, 250.0, delta=0.2)
    assert score.one_sided


def test_ncca_rest_hovers_near_one():
    vals = []
    for seed in range(30):
        x = eeg_record(freq=0.0, seed=seed, duration=3.0)
        vals.append(ssvep.ncca(x, 11.5, 250.0).ncca)
    m = float(np.mean(vals))
    assert 0.9 <= m <= 1.1


# ---------------------------------------------------------------------------
# window classification

def test_classify_finds_each_candidate():
    for f in ssvep.DEFAULT_CANDIDATES:
        x = eeg_record(freq=f, snr=3.0, seed=7, duration=3.0)
        res = ssvep.classify_window(x, 250.0)
        assert res.decision == f


def test_rest_mean_score_rarely_crosses_threshold():
    # single rest windows fluctuate widely (the score is a ratio of chance
    # correlations), so neutrality is a property of the mean over a record's
    # rest segments: per candidate, the mean 3 s score must sit at or below
    # the decision threshold for nearly every record
    false = 0
    trials = 0
    for seed in range(8):
        record, segments = ssvep_protocol(freqs=ssvep.DEFAULT_CANDIDATES,
                                          snr_db=0.0, n_channels=8,
                                          sample_rate=250.0, stim_s=25.0,
                                          rest_s=10.0, reps=3, seed=seed)
        x = record.modality(EEG)
        curves = ssvep.latency_curve(x, 250.0, segments, (3.0,))
        for f in ssvep.DEFAULT_CANDIDATES:
            trials += 1
            if curves.rest[f][0] > ssvep.DECISION_THRESHOLD:
                false += 1
    assert trials == 32
    assert false <= 6, (false, trials)


def test_classify_needs_one_second():
    x = np.zeros((2, 200))
    with pytest.raises(ValidationError):
        ssvep.classify_window(x, 250.0)


def test_classify_tie_breaks_to_lowest_frequency():
    # identical score lists must pick the lowest frequency; forced by feeding
    # a two-tone signal built from two candidates at equal amplitude
    fs = 250.0
    t = np.arange(int(3 * fs)) / fs
    x = np.vstack([np.sin(2 * np.pi * 7.5 * t) + np.sin(2 * np.pi * 13.5 * t),
                   np.cos(2 * np.pi * 7.5 * t) + np.cos(2 * np.pi * 13.5 * t)])
    res = ssvep.classify_window(x, fs)
    sm = res.score_map()
    if abs(sm[7.5].ncca - sm[13.5].ncca) < 1e-9:
        assert res.decision == 7.5


def test_classify_decision_scale_invariant():
    x = eeg_record(freq=15.5, snr=2.0, seed=8, duration=3.0)
    assert ssvep.classify_window(x, 250.0).decision == \
        ssvep.classify_window(2.5e3 * x, 250.0).decision


def test_mean_score_nondecreasing_in_snr():
    # the monotone trend lives in the mean over seeds. individual draws can
    # invert because above roughly -10 dB a 3 s window saturates: the tone
    # bleeds into the +-0.2 Hz flanking references and caps the ratio near
    # 1.9 regardless of amplitude
    means = []
    for snr in (-30.0, -20.0, -10.0, 0.0):
        vals = [ssvep.ncca(eeg_record(freq=11.5, snr=snr, seed=s,
                                      duration=3.0), 11.5, 250.0).ncca
                for s in range(12)]
        means.append(float(np.mean(vals)))
    for lo, hi in zip(means, means[1:]):
        assert hi >= lo - 0.02, means
    assert means[2] > means[0] + 0.5, means


# ---------------------------------------------------------------------------
# latency curves over protocol records

def test_latency_curevery_structure():
    record, segments = ssvep_protocol(freqs=(7.5, 11.5), snr_db=3.0,
                                      n_channels=4, sample_rate=250.0,
                                      stim_s=6.0, rest_s=3.0, reps=1, seed=0)
    x = record.modality(EEG)
    curves = ssvep.latency_curve(x, 250.0, segments, (1.0, 2.0, 3.0, 5.0))
    assert curves.windows_s == (1.0, 2.0, 3.0, 5.0)
    assert set(curves.targets) == {7.5, 11.5}
    for f, vals in curves.targets.items():
        assert len(vals) == 4
        assert all(v is not None for v in vals)
    # windows longer than the rest segment contribute nothing there
    for f, vals in curves.rest.items():
        assert vals[-1] is None


def test_latency_targets_grow_rest_stays_flat():
    # six rest segments keep the rest mean tight; two rest segments are not
    # enough, the heavy-tailed ratio mean then wanders well outside [0.8, 1.2]
    record, segments = ssvep_protocol(freqs=(9.5, 11.5), snr_db=3.0,
                                      n_channels=4, sample_rate=250.0,
                                      stim_s=8.0, rest_s=6.0, reps=3, seed=1)
    x = record.modality(EEG)
    curves = ssvep.latency_curve(x, 250.0, segments, (1.0, 3.0, 5.0))
    for f in (9.5, 11.5):
        t = curves.targets[f]
        assert t[1] > t[0] + 0.3 and t[2] > t[0] + 0.3, t
        for v in curves.rest[f]:
            assert 0.7 <= v <= 1.35, curves.rest[f]
