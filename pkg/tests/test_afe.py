"""Front-end model: quantizer scaling, input noise level, contact probing."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as orc
from biogap import afe
from biogap.errors import ShapeError, ValidationError


def cfg(fs=1000, gain=6, mask=0x1, noise=True):
    c = afe.AfeConfig(sample_rate=fs, gain=gain, channels_enabled=mask,
                      noise_enabled=noise)
    c.validate()
    return c


def test_lsb_is_full_scale_over_gain_and_depth():
    c = cfg(gain=6)
    assert c.lsb_uv == pytest.approx(2.4e6 / 6 / 2 ** 23)


def test_quantizer_is_rounding_not_truncation():
    c = cfg(noise=False)
    x = np.array([[c.lsb_uv * 0.6]])
    blk = afe.digitize(x, c)
    assert blk.codes[0, 0] == 1


def test_codes_invert_to_microvolts_within_half_lsb():
    c = cfg(noise=False)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1000, 1000, size=(1, 256))
    blk = afe.digitize(x, c)
    back = afe.codes_to_uv(blk.codes, c.gain)
    assert np.max(np.abs(back - x)) <= c.lsb_uv / 2 + 1e-12


@given(g1=st.sampled_from(afe.GAINS), g2=st.sampled_from(afe.GAINS))
@settings(max_examples=25, deadline=None)
def test_higher_gain_never_shrinks_codes(g1, g2):
    if g1 > g2:
        g1, g2 = g2, g1
    x = np.full((1, 8), 123.4)
    a = afe.digitize(x, cfg(gain=g1, noise=False)).codes
    b = afe.digitize(x, cfg(gain=g2, noise=False)).codes
    assert np.all(b >= a)


def test_saturation_flags_the_frame_and_clips():
    c = cfg(gain=12, noise=False)
    limit_uv = 2.4e6 / 12 / 2
    x = np.array([[0.0, limit_uv * 2, 0.0]])
    blk = afe.digitize(x, c)
    assert blk.codes[0, 1] == 2 ** 23 - 1
    assert not blk.saturated[0] and blk.saturated[1] and not blk.saturated[2]


def test_negative_rail_clips_to_min_code():
    c = cfg(gain=12, noise=False)
    x = np.array([[-2.4e6]])
    blk = afe.digitize(x, c)
    assert blk.codes[0, 0] == -(2 ** 23)
    assert blk.saturated[0]


def test_mask_selects_rows():
    c = cfg(mask=0b101, noise=False)
    x = np.zeros((3, 4))
    x[0], x[1], x[2] = 10.0, 20.0, 30.0
    blk = afe.digitize(x, c)
    assert blk.codes.shape == (2, 4)
    back = afe.codes_to_uv(blk.codes, c.gain)
    assert back[0, 0] == pytest.approx(10.0, abs=c.lsb_uv)
    assert back[1, 0] == pytest.approx(30.0, abs=c.lsb_uv)


def test_too_few_rows_for_mask_raises():
    c = cfg(mask=0b1000, noise=False)
    with pytest.raises(ShapeError):
        afe.digitize(np.zeros((2, 4)), c)


def test_noise_sigma_tracks_bandwidth():
    # white noise between 0.5 and Nyquist; the published figure integrates
    # 0.5-100 Hz, so sigma grows with sqrt of the rate ratio
    s1k = afe.noise_sigma_uv(1000.0)
    s4k = afe.noise_sigma_uv(4000.0)
    assert s4k / s1k == pytest.approx(2.0, rel=1e-12)
    assert s1k == pytest.approx(0.47 * np.sqrt(500.0 / 99.5), rel=1e-12)


def test_zero_input_noise_rms_in_band():
    # quick two-seed version; the acceptance run averages more seeds
    c = cfg(fs=1000, gain=6, noise=True)
    vals = []
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        blk = afe.digitize(np.zeros((1, 10_000)), c, rng=rng)
        uv = afe.codes_to_uv(blk.codes, c.gain)[0]
        vals.append(orc.band_rms(uv, 1000.0, 0.5, 100.0))
    assert np.mean(vals) == pytest.approx(0.47, rel=0.15)


def test_noise_disabled_is_exact_zero():
    blk = afe.digitize(np.zeros((1, 100)), cfg(noise=False))
    assert np.all(blk.codes == 0)


def test_digitize_deterministic_given_rng_seed():
    c = cfg()
    a = afe.digitize(np.zeros((1, 64)), c, rng=np.random.default_rng(5)).codes
    b = afe.digitize(np.zeros((1, 64)), c, rng=np.random.default_rng(5)).codes
    assert np.array_equal(a, b)


@pytest.mark.parametrize("bad", [
    dict(sample_rate=333),            # does not divide the tick clock
    dict(sample_rate=100),            # below the ExG floor
    dict(gain=5),                     # not an available gain step
    dict(channels_enabled=0),         # nothing to acquire
])
def test_config_validation_rejects(bad):
    base = dict(sample_rate=1000, gain=6, channels_enabled=1)
    base.update(bad)
    with pytest.raises(ValidationError):
        afe.AfeConfig(**base).validate()


def _lin(db: float) -> float:
    # simulate_contact_signals wants linear pass-through factors
    return 10.0 ** (-db / 20.0)


def test_contact_verdict_thresholds():
    # points sit clear of the 6 / 20 dB boundaries: the sampled square wave's
    # fundamental differs from the continuous 4A/pi by a few millidecibels
    report_like = [(0.0, "good"), (5.8, "good"), (6.2, "marginal"),
                   (19.5, "marginal"), (20.5, "open"), (60.0, "open")]
    c = cfg(mask=0x1, noise=False)
    for att, expect in report_like:
        sig = afe.simulate_contact_signals([_lin(att)], afe.DEFAULT_PROBE, c)
        rep = afe.contact_check(sig, afe.DEFAULT_PROBE, c.sample_rate)
        assert rep.verdicts[0] == expect, (att, rep.attenuation_db[0])


def test_contact_attenuation_recovered_through_quantizer():
    # full chain: probe injection -> attenuation -> digitize -> estimate
    c = cfg(fs=1000, gain=6, mask=0b111, noise=False)
    att = [0.0, 12.0, 40.0]
    sig = afe.simulate_contact_signals([_lin(a) for a in att], afe.DEFAULT_PROBE, c)
    blk = afe.digitize(sig, c, n_samples=sig.shape[1])
    uv = afe.codes_to_uv(blk.codes, c.gain)
    rep = afe.contact_check(uv, afe.DEFAULT_PROBE, c.sample_rate)
    for est, true in zip(rep.attenuation_db, att):
        assert est == pytest.approx(true, abs=0.5)
    assert list(rep.verdicts) == ["good", "marginal", "open"]


def test_contact_estimate_survives_afe_noise():
    c = cfg(fs=1000, gain=6, mask=0b11, noise=True)
    sig = afe.simulate_contact_signals([_lin(3.0), _lin(25.0)], afe.DEFAULT_PROBE, c)
    blk = afe.digitize(sig, c, rng=np.random.default_rng(2))
    uv = afe.codes_to_uv(blk.codes, c.gain)
    rep = afe.contact_check(uv, afe.DEFAULT_PROBE, c.sample_rate)
    assert list(rep.verdicts) == ["good", "open"]
