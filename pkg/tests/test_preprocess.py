import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limbchan.errors import EmptySignal, UnknownLead
from limbchan.preprocess import (
    LEADS_12,
    ChannelConfig,
    FrameDataset,
    build_dataset,
    design_lowpass,
    downsample,
    frame,
    normalize,
    record_frames,
    remove_baseline,
    resampling_ratio,
    select_channels,
)
from limbchan.wfdb import DiagnosisLabel, find_records, load_record


def tone(freq, rate=1000, seconds=10.0):
    t = np.arange(int(rate * seconds)) / rate
    return np.sin(2 * np.pi * freq * t)


def test_ratio():
    assert resampling_ratio(1000, 64) == (8, 125)
    assert resampling_ratio(500, 64) == (16, 125)


def test_lowpass_symmetric_and_unit_dc():
    taps = design_lowpass(1000, 64)
    assert len(taps) % 2 == 1
    np.testing.assert_allclose(taps, taps[::-1])
    assert abs(taps.sum() - 1.0) < 1e-6


def test_output_length():
    for n in (1000, 1001, 1015, 20000):
        assert downsample(np.zeros(n), 1000, 64).shape == ((n * 8) // 125,)


def test_passband_tone_preserved():
    y = downsample(tone(5.0), 1000, 64)
    mid = y[64:-64]
    t = (np.arange(len(y)) / 64.0)[64:-64]
    np.testing.assert_allclose(mid, np.sin(2 * np.pi * 5.0 * t), atol=1e-3)
    amp = np.sqrt(2 * np.mean(mid**2))
    assert abs(amp - 1.0) < 0.02


def test_alias_rejected():
    y = downsample(tone(450.0), 1000, 64)
    rms = np.sqrt(np.mean(y[64:-64] ** 2)) / np.sqrt(0.5)
    assert 20 * np.log10(rms + 1e-300) <= -40


def test_downsample_columns_independent():
    x = np.stack([tone(2.0), tone(7.0)], axis=1)
    y = downsample(x, 1000, 64)
    np.testing.assert_allclose(y[:, 1], downsample(x[:, 1], 1000, 64))


def test_downsample_errors():
    with pytest.raises(EmptySignal):
        downsample(np.zeros((0, 3)), 1000, 64)
    with pytest.raises(ValueError):
        downsample(np.zeros(100), 64, 1000)


def test_frame_counts():
    x = np.arange(500)
    fs = frame(x, 192)
    assert len(fs) == 2
    np.testing.assert_array_equal(fs[1], np.arange(192, 384))
    assert frame(np.arange(100), 192) == []
    assert len(frame(np.arange(400), 192, 96)) == 3


def test_normalize():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, size=(192, 4))
    x[:, 2] = 7.0
    y = normalize(x)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y[:, [0, 1, 3]].std(axis=0), 1, atol=1e-12)
    assert np.all(y[:, 2] == 0)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.1, 100), b=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_normalize_affine_invariant(a, b, seed):
    x = np.random.default_rng(seed).normal(size=(64, 3))
    np.testing.assert_allclose(normalize(a * x + b), normalize(x), atol=1e-8)


def test_remove_baseline_kills_offset():
    x = np.full((640, 2), 3.0) + 0.01 * np.sin(np.arange(640))[:, None]
    assert np.abs(remove_baseline(x, 64)).max() < 0.05


def test_channel_config():
    c = ChannelConfig.resolve(["ii", "III", "avf"])
    assert c.leads == ("II", "III", "aVF")
    assert c.indices == (1, 2, 5)
    assert ChannelConfig.resolve("V1,V2,V3").indices == (6, 7, 8)
    with pytest.raises(UnknownLead):
        ChannelConfig.resolve(["II", "V7"])
    with pytest.raises(ValueError):
        ChannelConfig.resolve(["II", "II"])


def _ds(n=4, k=12):
    labels = [DiagnosisLabel.from_class_name("Healthy Control")] * n
    data = np.arange(n * 8 * k, dtype=float).reshape(n, 8, k)
    return FrameDataset(data, labels, LEADS_12[:k], record_ids=[f"r{i}" for i in range(n)])


def test_select_channels_order():
    ds = _ds()
    sel = select_channels(ds, ChannelConfig.resolve(["aVF", "II"]))
    assert sel.channel_names == ("aVF", "II")
    np.testing.assert_array_equal(sel.data[..., 0], ds.data[..., 5])
    np.testing.assert_array_equal(sel.data[..., 1], ds.data[..., 1])
    with pytest.raises(UnknownLead):
        select_channels(select_channels(ds, ["II"]), ["V1"])


def test_dataset_validation():
    ds = _ds()
    with pytest.raises(ValueError):
        FrameDataset(ds.data, ds.labels[:2])
    bad = ds.data.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        FrameDataset(bad, ds.labels)
    assert len(ds.subset([0, 2])) == 2
    assert ds.subset([3]).record_ids == ["r3"]


def test_build_dataset_from_records(record_dir):
    recs = [load_record(p) for p in find_records(record_dir)]
    assert record_frames(recs[0])[0].shape == (192, 12)
    ds = build_dataset(recs)
    # 6000 -> 384 samples -> 2 frames; 9000 -> 576 -> 3 frames
    assert ds.data.shape == (5, 192, 12)
    assert ds.class_names == ["Myocardial Infarction: inferior"] * 2 + ["Healthy Control"] * 3
    assert ds.record_ids == ["s0001"] * 2 + ["s0002"] * 3
    np.testing.assert_allclose(ds.data.mean(axis=1), 0, atol=1e-10)


def test_build_dataset_skips_unknown(record_dir):
    recs = [load_record(p) for p in find_records(record_dir)]
    recs[0].label = DiagnosisLabel.from_class_name("nonsense")
    assert len(build_dataset(recs)) == 3
