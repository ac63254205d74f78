"""Synthetic formant-speech corpus for running the whole pipeline offline.

A small phone inventory (vowels, nasals, approximants, fricatives) is rendered
with a glottal pulse train through cascaded formant resonators, or shaped
noise for fricatives.  Words come from a seeded random lexicon.  Speakers
differ in pitch, vocal-tract scale and speaking rate.

Two trees are written:

* ``external/`` in the per-speaker-directory layout (many speakers, used as
  untranscribed speech),
* ``target/`` in the metadata-CSV layout (one speaker, transcribed),

plus ``lexicon.txt`` mapping each word to its phones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from .io import write_wav
from .signal import Waveform

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000

# (kind, F1, F2, F3, relative amplitude)
PHONES = {
    "a": ("vowel", 730, 1090, 2440, 1.0),
    "i": ("vowel", 270, 2290, 3010, 0.9),
    "u": ("vowel", 300, 870, 2240, 0.9),
    "e": ("vowel", 530, 1840, 2480, 1.0),
    "o": ("vowel", 570, 840, 2410, 1.0),
    "m": ("nasal", 250, 1000, 2200, 0.45),
    "n": ("nasal", 250, 1450, 2500, 0.45),
    "l": ("approx", 360, 1300, 2800, 0.7),
    "r": ("approx", 420, 1300, 1600, 0.7),
    "s": ("fric", 4500, 7000, 0, 0.25),
    "sh": ("fric", 2200, 4200, 0, 0.3),
    "f": ("fric", 1000, 6500, 0, 0.12),
}
VOWELS = ["a", "i", "u", "e", "o"]
CONSONANTS = ["m", "n", "l", "r", "s", "sh", "f"]
BANDWIDTHS = (80.0, 110.0, 160.0)
BASE_DURATION = {"vowel": 0.11, "nasal": 0.07, "approx": 0.065, "fric": 0.09}


@dataclass(frozen=True)
class Speaker:
    name: str
    f0: float
    formant_scale: float
    rate: float


def make_lexicon(n_words: int = 40, seed: int = 7) -> dict[str, list[str]]:
    rng = np.random.default_rng(seed)
    lexicon: dict[str, list[str]] = {}
    while len(lexicon) < n_words:
        n_syl = int(rng.integers(1, 3))
        phones = []
        for _ in range(n_syl):
            phones.append(str(rng.choice(CONSONANTS)))
            phones.append(str(rng.choice(VOWELS)))
        if rng.random() < 0.4:
            phones.append(str(rng.choice(CONSONANTS)))
        word = "".join(phones)
        lexicon.setdefault(word, phones)
    return dict(sorted(lexicon.items()))


def _resonator(x, freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _render_phone(phone, dur, spk: Speaker, rng, t0: float, sr=SAMPLE_RATE):
    kind, f1, f2, f3, amp = PHONES[phone]
    n = max(int(dur * sr), 1)
    if kind == "fric":
        lo = min(f1 * spk.formant_scale, sr / 2 - 200)
        hi = min(f2 * spk.formant_scale, sr / 2 - 100)
        b, a = butter(2, [lo / (sr / 2), hi / (sr / 2)], btype="band")
        out = lfilter(b, a, rng.standard_normal(n + 256))[256:] * 0.5
    else:
        t = t0 + np.arange(n) / sr
        f0 = spk.f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 3.0 * t))
        phase = np.cumsum(f0 / sr)
        pulses = np.diff(np.floor(phase), prepend=np.floor(phase[0])) > 0
        src = pulses.astype(np.float64) + 0.01 * rng.standard_normal(n)
        out = src
        for f, bw in zip((f1, f2, f3), BANDWIDTHS):
            out = _resonator(out, f * spk.formant_scale, bw, sr)
        out = out * 8.0
    return amp * out


def synthesize_phones(phones: list[str], spk: Speaker, rng: np.random.Generator, sr=SAMPLE_RATE) -> Waveform:
    """Overlap-add phone segments with raised-cosine cross-fades."""
    fade = int(0.012 * sr)
    pieces = []
    t = 0.0
    for ph in phones:
        if ph == "_":
            dur = 0.05 / spk.rate
            pieces.append(np.zeros(int(dur * sr)))
            t += dur
            continue
        kind = PHONES[ph][0]
        dur = BASE_DURATION[kind] / spk.rate * float(rng.uniform(0.85, 1.15))
        seg = _render_phone(ph, dur + fade / sr, spk, rng, t, sr)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        seg[:fade] *= ramp
        seg[-fade:] *= ramp[::-1]
        pieces.append(seg)
        t += dur
    lead = np.zeros(int(0.08 * sr))
    total = len(lead) * 2 + sum(len(p) for p in pieces)
    out = np.zeros(total)
    pos = len(lead)
    for p in pieces:
        out[pos : pos + len(p)] += p
        pos += max(len(p) - fade, 0) if p.any() else len(p)
    out = out[: pos + len(lead) + fade]
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak * 0.5
    out = out + 1e-4 * rng.standard_normal(out.shape[0])
    return Waveform(out, sr)


def sentence(lexicon, rng, n_words=(2, 4)) -> list[str]:
    words = sorted(lexicon)
    k = int(rng.integers(n_words[0], n_words[1] + 1))
    return [str(words[i]) for i in rng.integers(0, len(words), size=k)]


def words_to_phones(words, lexicon) -> list[str]:
    phones = []
    for i, w in enumerate(words):
        if i:
            phones.append("_")
        phones.extend(lexicon[w])
    return phones


def external_speakers(n: int, seed: int) -> list[Speaker]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(Speaker(
            name=f"p{i + 1:03d}",
            f0=float(rng.uniform(95, 230)),
            formant_scale=float(rng.uniform(0.9, 1.12)),
            rate=float(rng.uniform(0.9, 1.1)),
        ))
    return out


TARGET_SPEAKER = Speaker("target", f0=165.0, formant_scale=1.04, rate=1.0)


def build_toy_corpus(
    root,
    external_minutes: float = 15.0,
    target_minutes: float = 4.0,
    n_external_speakers: int = 6,
    seed: int = 0,
) -> dict:
    """Write the bundled toy corpus under ``root``; returns a summary dict."""
    root = Path(root)
    lexicon = make_lexicon(seed=seed + 7)
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "lexicon.txt", "w", encoding="utf-8", newline="\n") as fh:
        for word, phones in lexicon.items():
            fh.write(f"{word} {' '.join(phones)}\n")

    speakers = external_speakers(n_external_speakers, seed + 1)
    ext_seconds = 0.0
    count = 0
    while ext_seconds < external_minutes * 60:
        spk = speakers[count % len(speakers)]
        words = sentence(lexicon, rng)
        wav = synthesize_phones(words_to_phones(words, lexicon), spk, rng)
        utt = f"{spk.name}_{count // len(speakers) + 1:03d}"
        write_wav(root / "external" / "wav" / spk.name / f"{utt}.wav", wav)
        txt = root / "external" / "txt" / spk.name / f"{utt}.txt"
        txt.parent.mkdir(parents=True, exist_ok=True)
        txt.write_text(" ".join(words) + "\n", encoding="utf-8")
        ext_seconds += wav.duration
        count += 1

    tgt_seconds = 0.0
    rows = []
    i = 0
    while tgt_seconds < target_minutes * 60:
        words = sentence(lexicon, rng)
        wav = synthesize_phones(words_to_phones(words, lexicon), TARGET_SPEAKER, rng)
        utt = f"T{i + 1:04d}"
        write_wav(root / "target" / "wavs" / f"{utt}.wav", wav)
        text = " ".join(words).capitalize() + "."
        rows.append(f"{utt}|{text}|{text}\n")
        tgt_seconds += wav.duration
        i += 1
    with open(root / "target" / "metadata.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(rows)
    summary = {
        "external_utterances": count,
        "external_seconds": ext_seconds,
        "target_utterances": i,
        "target_seconds": tgt_seconds,
        "lexicon_words": len(lexicon),
    }
    log.info("toy corpus: %s", summary)
    return summary
