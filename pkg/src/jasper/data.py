"""Manifests, length-bucketed batching, and a synthetic tone corpus.

A manifest is JSON lines with ``audio_filepath``, ``text`` and ``duration``
(seconds) per utterance, plus an optional ``id``.  Relative paths resolve
against ``$JASPER_DATA_ROOT`` when set, otherwise the manifest's directory.
Paths ending in ``.feat`` are precomputed feature files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.ops import make_rng
from .ctc import Alphabet
from .features import AudioClip, FeatureConfig, mel_features, read_feature_file, read_wav, speed_perturb, write_wav
from .metrics import normalize_text

DATA_ROOT_ENV = "JASPER_DATA_ROOT"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    path: Path
    text: str
    duration: float


def load_manifest(path, data_root=None, alphabet: Alphabet | None = None) -> list[Utterance]:
    """Parse and validate a manifest; every problem names the line it came from."""
    path = Path(path)
    root = Path(data_root or os.environ.get(DATA_ROOT_ENV) or path.parent)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"{path}: {exc.strerror}") from None
    out, seen = [], set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{where}: invalid JSON ({exc.msg})") from None
        missing = [k for k in ("audio_filepath", "text", "duration") if k not in rec]
        if missing:
            raise ManifestError(f"{where}: missing field(s) {missing}")
        audio = Path(rec["audio_filepath"])
        audio = audio if audio.is_absolute() else root / audio
        if not audio.exists():
            raise ManifestError(f"{where}: audio file not found: {audio}")
        text = normalize_text(str(rec["text"]))
        if not text:
            raise ManifestError(f"{where}: transcript empty after normalization")
        if alphabet is not None:
            bad = sorted(set(text) - set(alphabet.graphemes))
            if bad:
                raise ManifestError(f"{where}: transcript has symbols outside the alphabet: {bad}")
        utt_id = str(rec.get("id", audio.stem))
        if utt_id in seen:
            raise ManifestError(f"{where}: duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        try:
            duration = float(rec["duration"])
        except (TypeError, ValueError):
            raise ManifestError(f"{where}: duration is not a number") from None
        out.append(Utterance(utt_id, audio, text, duration))
    if not out:
        raise ManifestError(f"{path}: manifest is empty")
    return out


def write_manifest(path, utts: list[Utterance], relative_to=None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u in utts:
            p = u.path.relative_to(relative_to) if relative_to else u.path
            rec = {"id": u.utt_id, "audio_filepath": str(p), "text": u.text, "duration": u.duration}
            f.write(json.dumps(rec) + "\n")


def utterance_features(utt: Utterance, cfg: FeatureConfig, speed: float = 1.0) -> np.ndarray:
    """Features ``[n_mels, T]`` for one utterance, optionally speed-perturbed."""
    if utt.path.suffix == ".feat":
        feats = read_feature_file(utt.path)[0]
        if feats.shape[0] != cfg.n_mels:
            raise ManifestError(f"{utt.path}: {feats.shape[0]} feature channels, expected {cfg.n_mels}")
        return feats
    clip = read_wav(utt.path)
    if speed != 1.0:
        clip = speed_perturb(clip, speed)
    return mel_features(clip, cfg)[0]


def bucket_batches(durations, batch_size: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Group indices of similar duration into batches; batch order is shuffled by ``rng``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(durations)), key=lambda i: (durations[i], i))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


# --- synthetic tone corpus ---------------------------------------------------

TONE_WORDS = ("bad", "cab", "dab", "bead", "face", "fed", "deaf", "cafe", "add", "bag", "ace", "egg")


TONE_SYMBOLS = "abcdefg "


def tone_frequency(symbol: str) -> float:
    """Each corpus symbol gets its own tone, a ratio of 1.45 apart from 300 Hz.

    The wide spacing keeps neighbouring symbols in different mel bands.
    """
    if symbol not in TONE_SYMBOLS:
        raise ValueError(f"no tone for symbol {symbol!r}")
    return 300.0 * 1.45 ** TONE_SYMBOLS.index(symbol)


def synth_utterance(
    text: str, rng, sample_rate=16000, char_sec=0.08, gap_sec=0.02, edge_sec=0.05, noise=0.003
) -> AudioClip:
    """Concatenated tones, one per character (space included), separated by short gaps."""
    n_char, n_gap, n_edge = (int(round(s * sample_rate)) for s in (char_sec, gap_sec, edge_sec))
    t = np.arange(n_char) / sample_rate
    ramp = np.minimum(1.0, np.minimum(np.arange(n_char), np.arange(n_char)[::-1]) / (0.005 * sample_rate))
    parts = [np.zeros(n_edge)]
    for ch in text:
        parts.append(0.3 * ramp * np.sin(2 * np.pi * tone_frequency(ch) * t))
        parts.append(np.zeros(n_gap))
    parts.append(np.zeros(n_edge))
    x = np.concatenate(parts)
    return AudioClip(x + noise * rng.normal(size=len(x)), sample_rate)


def random_sentence(rng, max_words=3) -> str:
    n = int(rng.integers(1, max_words + 1))
    return " ".join(TONE_WORDS[int(i)] for i in rng.integers(0, len(TONE_WORDS), size=n))


def make_tone_corpus(
    out_dir, n_utts: int = 20, seed: int = 0, n_lm_sentences: int = 400, noise: float = 0.003
) -> dict[str, Path]:
    """Write wavs, ``train.jsonl`` and an LM text corpus; returns the created paths.

    The LM corpus is drawn independently of the audio transcripts, from the
    same word list, plus the transcripts themselves so every word is known.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed, 0)
    utts = []
    for i in range(n_utts):
        text = random_sentence(rng)
        clip = synth_utterance(text, rng, noise=noise)
        wav = out / "wav" / f"tone{i:03d}.wav"
        write_wav(wav, clip)
        utts.append(Utterance(f"tone{i:03d}", wav, text, clip.duration))
    write_manifest(out / "train.jsonl", utts, relative_to=out)
    lm_rng = make_rng(seed, 1)
    lm_lines = [u.text for u in utts] + [random_sentence(lm_rng) for _ in range(n_lm_sentences)]
    (out / "lm_corpus.txt").write_text("\n".join(lm_lines) + "\n", encoding="utf-8")
    heldout = [random_sentence(lm_rng) for _ in range(50)]
    (out / "lm_heldout.txt").write_text("\n".join(heldout) + "\n", encoding="utf-8")
    return {
        "manifest": out / "train.jsonl",
        "lm_corpus": out / "lm_corpus.txt",
        "lm_heldout": out / "lm_heldout.txt",
    }
