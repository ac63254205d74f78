"""Unit discovery: quantize VQ-VAE latents and drop consecutive repeats."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .io import read_symbol_file, write_symbol_file
from .signal import FrameConfig, Waveform, mfcc
from .vq import VqVae, encode, quantize_sequence


@dataclass(frozen=True)
class UnitSequence:
    utterance_id: str
    units: tuple[int, ...]

    def __post_init__(self):
        u = tuple(int(x) for x in self.units)
        if any(a == b for a, b in zip(u, u[1:])):
            raise InvalidInputError(f"{self.utterance_id}: adjacent repeated units")
        if any(x < 0 for x in u):
            raise InvalidInputError(f"{self.utterance_id}: negative unit id")
        object.__setattr__(self, "units", u)

    def __len__(self):
        return len(self.units)


@dataclass(frozen=True)
class UnitInventory:
    counts: dict[int, int]
    perplexity: float
    coverage: float

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def collapse_repeats(seq) -> list[int]:
    """[5, 5, 5, 2, 2, 7] -> [5, 2, 7]."""
    return _kernels.collapse(np.asarray(list(seq), dtype=np.int64)).tolist()


def extract_units(w: Waveform, model: VqVae, utterance_id: str = "", cfg: FrameConfig = FrameConfig()) -> UnitSequence:
    """Nearest-codeword ids of the encoded MFCCs with repeats collapsed.

    Runs without jitter, so the result depends only on the waveform and the
    model parameters.
    """
    z = encode(model, mfcc(w, cfg))
    idx, _ = quantize_sequence(z, model.get_codebook())
    return UnitSequence(utterance_id, tuple(collapse_repeats(idx)))


def unit_stats(seqs, codebook_size: int) -> UnitInventory:
    counts: Counter = Counter()
    for s in seqs:
        units = s.units if isinstance(s, UnitSequence) else s
        for u in units:
            if not 0 <= u < codebook_size:
                raise InvalidInputError(f"unit id {u} outside [0, {codebook_size})")
        counts.update(units)
    total = sum(counts.values())
    if total == 0:
        return UnitInventory({}, 1.0, 0.0)
    p = np.array([counts[k] for k in sorted(counts)], dtype=np.float64) / total
    entropy = float(-(p * np.log(p)).sum())
    return UnitInventory(dict(sorted(counts.items())), float(np.exp(entropy)), len(counts) / codebook_size)


def write_unit_file(path, seqs) -> None:
    write_symbol_file(path, {s.utterance_id: list(s.units) for s in seqs})


def read_unit_file(path) -> list[UnitSequence]:
    return [UnitSequence(k, tuple(v)) for k, v in read_symbol_file(path, as_int=True).items()]
