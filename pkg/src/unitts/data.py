"""Corpus manifests, text normalisation/phonemisation, shards and paired datasets."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError
from .io import read_wav

log = logging.getLogger(__name__)

MANIFEST_HEADER = "# unitts-manifest v1"
KEPT_PUNCTUATION = ",.?!"


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    audio_path: str
    duration: float
    speaker_id: str
    text: str | None = None
    phonemes: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidInputError(f"{self.utterance_id}: duration must be positive")
        for name in ("utterance_id", "audio_path", "speaker_id", "text"):
            value = getattr(self, name)
            if value is not None and ("|" in value or "\n" in value):
                raise InvalidInputError(f"{self.utterance_id}: {name} may not contain '|' or newlines")


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    name: str = "corpus"
    language: str = "und"
    sample_rate: int = 16000
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.utterance_id in seen:
                raise InvalidInputError(f"duplicate utterance id {r.utterance_id!r}")
            seen.add(r.utterance_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def total_duration(self) -> float:
        return float(sum(r.duration for r in self.records))

    def ids(self) -> list[str]:
        return [r.utterance_id for r in self.records]

    def subset(self, ids) -> "Manifest":
        keep = set(ids)
        return Manifest([r for r in self.records if r.utterance_id in keep], self.name, self.language, self.sample_rate)

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})


@dataclass(frozen=True)
class Shard:
    index: int
    records: tuple[UtteranceRecord, ...]

    @property
    def total_duration(self) -> float:
        return float(sum(r.duration for r in self.records))


# ---------------------------------------------------------------- manifest file


def write_manifest(path, m: Manifest) -> None:
    lines = [f"{MANIFEST_HEADER} name={m.name} language={m.language} sample_rate={m.sample_rate}\n"]
    for r in m.records:
        lines.append(f"{r.utterance_id}|{r.audio_path}|{r.speaker_id}|{r.duration!r}|{r.text or ''}\n")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def read_manifest(path) -> Manifest:
    meta = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for tok in line.split()[2:]:
                    key, _, value = tok.partition("=")
                    meta[key] = value
                continue
            parts = line.split("|")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 '|'-separated fields, got {len(parts)}")
            utt, audio, spk, dur, text = parts
            records.append(UtteranceRecord(utt, audio, float(dur), spk, text or None))
    return Manifest(
        records,
        name=meta.get("name", "corpus"),
        language=meta.get("language", "und"),
        sample_rate=int(meta.get("sample_rate", 16000)),
    )


# ---------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class Layout:
    """Where audio and transcripts live under a corpus root.

    ``kind="ljspeech"``: ``metadata.csv`` rows ``id|text|normalized text`` and
    audio in ``wavs/<id>.wav``; every utterance belongs to ``speaker``.

    ``kind="vctk"``: audio in ``<wav_dir>/<speaker>/<id>.wav`` and optional
    transcripts in ``txt/<speaker>/<id>.txt``.
    """

    kind: str
    speaker: str = "speaker"
    wav_dir: str = "wav"
    use_text: bool = True

    def __post_init__(self):
        if self.kind not in ("ljspeech", "vctk"):
            raise InvalidInputError(f"unknown layout kind {self.kind!r}")


def _candidates(root: Path, layout: Layout):
    if layout.kind == "ljspeech":
        meta = root / "metadata.csv"
        if not meta.exists():
            raise DataError(f"{meta} not found")
        with open(meta, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split("|")
                if not parts[0]:
                    continue
                text = parts[-1] if len(parts) > 1 and layout.use_text else None
                yield parts[0], root / "wavs" / f"{parts[0]}.wav", layout.speaker, text
    else:
        wav_root = root / layout.wav_dir
        if not wav_root.is_dir():
            raise DataError(f"{wav_root} is not a directory")
        for spk_dir in sorted(p for p in wav_root.iterdir() if p.is_dir()):
            for wav in sorted(spk_dir.glob("*.wav")):
                text = None
                txt = root / "txt" / spk_dir.name / f"{wav.stem}.txt"
                if layout.use_text and txt.exists():
                    text = txt.read_text(encoding="utf-8").strip()
                yield wav.stem, wav, spk_dir.name, text


def _probe(item, min_samples):
    utt, path, spk, text = item
    try:
        w = read_wav(path)
    except (DataError, FileNotFoundError) as exc:
        return None, (utt, str(exc))
    if len(w) < min_samples:
        return None, (utt, f"shorter than one analysis window ({len(w)} < {min_samples} samples)")
    if text is not None:
        text = text.replace("|", " ").strip() or None
    return (UtteranceRecord(utt, str(path), w.duration, spk, text), w.sample_rate), None


def ingest_corpus(root, layout: Layout, name: str | None = None, language: str = "und",
                  min_samples: int = 800, workers: int = 1) -> Manifest:
    """Scan a corpus tree into a manifest, skipping unreadable or too-short audio."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    items = list(_candidates(root, layout))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda it: _probe(it, min_samples), items))
    else:
        results = [_probe(it, min_samples) for it in items]
    records, skipped, rates = [], [], set()
    for ok, bad in results:
        if bad is not None:
            log.warning("skipping %s: %s", *bad)
            skipped.append(bad)
        else:
            records.append(ok[0])
            rates.add(ok[1])
    if not records:
        raise DataError(f"no valid utterances under {root}")
    if len(rates) > 1:
        raise DataError(f"mixed sample rates under {root}: {sorted(rates)}")
    log.info("ingested %d utterances (%d skipped) from %s", len(records), len(skipped), root)
    return Manifest(records, name or root.name, language, rates.pop(), skipped)


# ---------------------------------------------------------------- shards


def shard_split(m: Manifest, shard_minutes: float = 24.0, seed: int = 0) -> list[Shard]:
    """Shuffle by ``seed`` then greedily fill consecutive shards up to the target.

    A shard closes when the next utterance would overflow it, so each full
    shard lasts between ``target - longest utterance`` and ``target``.  A
    trailing partial shard is dropped.
    """
    target = shard_minutes * 60.0
    if m.total_duration < target:
        raise InvalidInputError(f"{m.total_duration:.1f}s of audio is less than one {shard_minutes}-minute shard")
    longest = max(r.duration for r in m.records)
    order = np.random.default_rng(seed).permutation(len(m.records))
    shards, current, total = [], [], 0.0
    for i in order:
        r = m.records[i]
        if total + r.duration > target + 1e-9:
            if total >= target - longest - 1e-9:
                shards.append(Shard(len(shards), tuple(current)))
            current, total = [], 0.0
        current.append(r)
        total += r.duration
    if current and total >= target - longest - 1e-9:
        shards.append(Shard(len(shards), tuple(current)))
    return shards


def shard_prefix(m: Manifest, n_shards: float, shard_minutes: float = 24.0, seed: int = 0) -> Manifest:
    """Records of the first ``n_shards`` shards (multiples of 0.5).

    Built from half-size shards, so the selection for ``k`` shards contains
    the selection for ``k - 0.5``.
    """
    halves = n_shards * 2
    if halves <= 0 or abs(halves - round(halves)) > 1e-9:
        raise InvalidInputError("shard amounts must be positive multiples of 0.5")
    halves = int(round(halves))
    pieces = shard_split(m, shard_minutes / 2.0, seed)
    if len(pieces) < halves:
        raise InvalidInputError(f"only {len(pieces) / 2} shards available, {n_shards} requested")
    ids = [r.utterance_id for s in pieces[:halves] for r in s.records]
    return m.subset(ids)


# ---------------------------------------------------------------- text


_ONES = "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen " \
        "sixteen seventeen eighteen nineteen".split()
_TENS = "_ _ twenty thirty forty fifty sixty seventy eighty ninety".split()


def number_to_words(n: int) -> str:
    if n < 20:
        return _ONES[n]
    if n < 100:
        return _TENS[n // 10] + ("" if n % 10 == 0 else " " + _ONES[n % 10])
    if n < 1000:
        rest = n % 100
        return _ONES[n // 100] + " hundred" + ("" if rest == 0 else " " + number_to_words(rest))
    # longer numbers are read digit by digit
    return " ".join(_ONES[int(d)] for d in str(n))


def normalize_text(text: str) -> list[str]:
    """Lower-case, expand numerals, keep ``,.?!`` as tokens, drop other punctuation."""
    text = text.lower()
    text = re.sub(r"\d+", lambda mo: f" {number_to_words(int(mo.group()))} ", text)
    text = re.sub(rf"([{re.escape(KEPT_PUNCTUATION)}])", r" \1 ", text)
    text = re.sub(rf"[^\w\s'{re.escape(KEPT_PUNCTUATION)}]|_", " ", text)
    return [t.strip("'") for t in text.split() if t.strip("'")]


class Lexicon:
    """Word to phone-sequence table; one ``word p1 p2 ...`` entry per line."""

    def __init__(self, entries: dict[str, list[str]] | None = None):
        self.entries = {k.lower(): list(v) for k, v in (entries or {}).items()}

    @classmethod
    def load(cls, path) -> "Lexicon":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) >= 2:
                    entries[parts[0]] = parts[1:]
        return cls(entries)

    def __contains__(self, word):
        return word in self.entries

    def __call__(self, word: str) -> list[str] | None:
        return self.entries.get(word)

    def phone_set(self) -> list[str]:
        return sorted({p for v in self.entries.values() for p in v})


def phonemize(text: str, lexicon, word_boundary: str | None = None) -> list[str]:
    """Normalised text to phones via ``lexicon``; unknown words fall back to letters.

    ``lexicon`` is any callable returning a phone list or ``None`` for an
    unknown word.  ``word_boundary``, when given, is inserted between words.
    """
    tokens = normalize_text(text)
    if not any(t not in KEPT_PUNCTUATION for t in tokens):
        raise InvalidInputError(f"no words left after normalising {text!r}")
    out: list[str] = []
    prev_word = False
    for tok in tokens:
        if tok in KEPT_PUNCTUATION:
            out.append(tok)
            prev_word = False
            continue
        if prev_word and word_boundary:
            out.append(word_boundary)
        phones = lexicon(tok)
        if phones is None:
            log.warning("out-of-lexicon word %r: using graphemes", tok)
            phones = list(tok)
        out.extend(phones)
        prev_word = True
    return out


# ---------------------------------------------------------------- paired data


@dataclass(frozen=True)
class Pair:
    utterance_id: str
    symbols: tuple
    audio_path: str
    speaker_id: str


def pair_dataset(m: Manifest, symbols: dict[str, list]) -> list[Pair]:
    """Join manifest audio with symbol sequences; unmatched ids are dropped with a warning."""
    pairs = []
    for r in m.records:
        seq = symbols.get(r.utterance_id)
        if not seq:
            log.warning("dropping %s: no symbol sequence", r.utterance_id)
            continue
        pairs.append(Pair(r.utterance_id, tuple(seq), r.audio_path, r.speaker_id))
    if not pairs:
        raise DataError("no utterance has both audio and symbols")
    return pairs


def bucket_batches(items, batch_size: int, key=len, seed: int = 0) -> list[list]:
    """Group items of similar ``key`` into batches; batch order is shuffled by ``seed``."""
    items = list(items)
    order = sorted(range(len(items)), key=lambda i: (key(items[i]), i))
    batches = [[items[i] for i in order[s : s + batch_size]] for s in range(0, len(order), batch_size)]
    perm = np.random.default_rng(seed).permutation(len(batches))
    return [batches[i] for i in perm]


def with_phonemes(m: Manifest, lexicon, word_boundary: str | None = None) -> Manifest:
    """Copy of ``m`` whose records carry phonemised text; untranscribed records are dropped."""
    recs = []
    for r in m.records:
        if not r.text:
            log.warning("dropping %s: no transcript", r.utterance_id)
            continue
        try:
            recs.append(replace(r, phonemes=tuple(phonemize(r.text, lexicon, word_boundary))))
        except InvalidInputError as exc:
            log.warning("dropping %s: %s", r.utterance_id, exc)
    return Manifest(recs, m.name, m.language, m.sample_rate)
