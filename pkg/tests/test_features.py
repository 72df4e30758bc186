import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jasper.features import (
    AudioClip,
    FeatureConfig,
    WavFormatError,
    mel_band_centers,
    mel_features,
    num_frames,
    read_feature_file,
    read_wav,
    speed_perturb,
    write_feature_file,
    write_wav,
)


def test_read_silence(tmp_path):
    path = tmp_path / "zeros.wav"
    write_wav(path, AudioClip(np.zeros(16000)))
    clip = read_wav(path)
    assert clip.sample_rate == 16000
    assert len(clip.samples) == 16000 and not clip.samples.any()


def test_full_scale_square_wave_bounds(tmp_path):
    path = tmp_path / "square.wav"
    pcm = np.tile(np.array([32767, -32768], dtype="<i2"), 800)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(pcm.tobytes())
    s = read_wav(path).samples
    assert s.min() == -1.0 and s.max() == 32767 / 32768
    assert np.all((s >= -1) & (s < 1))


def test_wav_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.integers(-32768, 32768, size=4321) / 32768.0
    path = tmp_path / "r.wav"
    write_wav(path, AudioClip(samples, 8000))
    back = read_wav(path)
    assert back.sample_rate == 8000
    assert np.array_equal(back.samples, samples)


def test_wav_rejects_stereo_and_truncation(tmp_path):
    stereo = tmp_path / "st.wav"
    with wave.open(str(stereo), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(b"\x00" * 400)
    with pytest.raises(WavFormatError, match="mono"):
        read_wav(stereo)
    good = tmp_path / "g.wav"
    write_wav(good, AudioClip(np.zeros(1000)))
    cut = tmp_path / "cut.wav"
    cut.write_bytes(good.read_bytes()[:-100])
    with pytest.raises(WavFormatError):
        read_wav(cut)
    eight = tmp_path / "u8.wav"
    with wave.open(str(eight), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(16000)
        wf.writeframes(b"\x80" * 100)
    with pytest.raises(WavFormatError, match="16-bit"):
        read_wav(eight)


def test_one_second_gives_99_frames():
    feats = mel_features(AudioClip(np.random.default_rng(1).normal(size=16000) * 0.1), FeatureConfig(n_mels=64))
    assert feats.shape == (1, 64, 99)


@given(n=st.integers(320, 5000), win=st.integers(16, 320), hop=st.integers(1, 320))
@settings(max_examples=100, deadline=None)
def test_frame_count_formula(n, win, hop):
    if hop > win or n < win:
        return
    frames = np.lib.stride_tricks.sliding_window_view(np.arange(n), win)[::hop]
    assert num_frames(n, win, hop) == len(frames)
    # exhaustive check: last frame fits, one more would not
    t = num_frames(n, win, hop)
    assert (t - 1) * hop + win <= n < t * hop + win


def test_silence_frames_identical():
    feats = mel_features(AudioClip(np.zeros(8000)), FeatureConfig(n_mels=40, normalize=False))
    assert np.all(feats == feats[0, 0, 0])
    assert feats[0, 0, 0] == pytest.approx(np.log(1e-20))


@pytest.mark.parametrize("band", [10, 25, 40, 55])
def test_tone_at_band_center_peaks_in_that_band(band):
    sr = 16000
    f0 = mel_band_centers(64, sr)[band]
    t = np.arange(sr) / sr
    clip = AudioClip(0.5 * np.sin(2 * np.pi * f0 * t), sr)
    feats = mel_features(clip, FeatureConfig(n_mels=64, normalize=False, preemphasis=0.0))
    assert np.all(feats[0].argmax(axis=0) == band)


def test_features_deterministic():
    clip = AudioClip(np.random.default_rng(2).normal(size=5000) * 0.2)
    assert np.array_equal(mel_features(clip), mel_features(clip))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_normalized_features_moments(seed):
    clip = AudioClip(np.random.default_rng(seed).normal(size=6000) * 0.3)
    feats = mel_features(clip, FeatureConfig(n_mels=40, normalize=True))[0]
    assert np.abs(feats.mean(axis=1)).max() < 1e-9
    assert np.abs(feats.var(axis=1) - 1).max() < 1e-6


def test_short_clip_rejected():
    with pytest.raises(ValueError, match="shorter"):
        mel_features(AudioClip(np.zeros(100)))


def test_speed_perturb_identity_and_length():
    x = np.random.default_rng(3).normal(size=16000)
    assert np.array_equal(speed_perturb(AudioClip(x), 1.0).samples, x)
    assert len(speed_perturb(AudioClip(x), 1.1).samples) == 14545
    assert len(speed_perturb(AudioClip(x), 0.9).samples) == round(16000 / 0.9)


@given(n=st.integers(10, 3000), factor=st.floats(0.85, 1.15))
@settings(max_examples=50, deadline=None)
def test_speed_perturb_keeps_ramps_linear(n, factor):
    ramp = np.linspace(-0.5, 0.5, n)
    out = speed_perturb(AudioClip(ramp), factor).samples
    assert len(out) == round(n / factor)
    if len(out) > 2:
        expected = np.linspace(out[0], out[-1], len(out))
        assert np.abs(out - expected).max() < 1e-9


def test_speed_perturb_range():
    with pytest.raises(ValueError):
        speed_perturb(AudioClip(np.zeros(10)), 1.3)


def test_feature_file_round_trip(tmp_path):
    feats = np.random.default_rng(4).normal(size=(1, 40, 17)).astype(np.float32).astype(np.float64)
    path = tmp_path / "x.feat"
    write_feature_file(path, feats)
    assert path.stat().st_size == 8 + 4 * 40 * 17
    assert np.array_equal(read_feature_file(path), feats)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_feature_file(path)
