import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from unitts.errors import InvalidInputError
from unitts.signal import Waveform
from unitts.units import (
    UnitSequence,
    collapse_repeats,
    extract_units,
    read_unit_file,
    unit_stats,
    write_unit_file,
)
from unitts.vq import VqConfig, VqVae


def run_lengths_oracle(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return out


def test_collapse_example():
    assert collapse_repeats([5, 5, 5, 2, 2, 7]) == [5, 2, 7]


def test_collapse_empty():
    assert collapse_repeats([]) == []


@given(st.lists(st.integers(0, 4), max_size=60))
def test_collapse_properties(seq):
    out = collapse_repeats(seq)
    assert out == run_lengths_oracle(seq)
    assert all(a != b for a, b in zip(out, out[1:]))
    assert collapse_repeats(out) == out


def test_unit_sequence_rejects_repeats():
    with pytest.raises(InvalidInputError):
        UnitSequence("u", (1, 1, 2))


def test_perplexity_two_symbols():
    inv = unit_stats([[0, 1, 0, 1]], 4)
    assert inv.perplexity == pytest.approx(2.0)
    assert inv.coverage == 0.5
    assert inv.counts == {0: 2, 1: 2}


def test_perplexity_out_of_range():
    with pytest.raises(InvalidInputError):
        unit_stats([[0, 9]], 4)


def test_unit_file_round_trip(tmp_path):
    seqs = [UnitSequence("a", (3, 1, 3)), UnitSequence("b", (0,))]
    write_unit_file(tmp_path / "u.txt", seqs)
    assert (tmp_path / "u.txt").read_text() == "a\t3 1 3\nb\t0\n"
    assert read_unit_file(tmp_path / "u.txt") == seqs


def test_extract_units_deterministic_and_collapsed():
    torch.manual_seed(0)
    model = VqVae(VqConfig(codebook_size=16, dim=4, hidden=16), ["s"])
    w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 8000), 16000)
    a = extract_units(w, model, "x")
    b = extract_units(w, model, "x")
    assert a == b
    assert all(p != q for p, q in zip(a.units, a.units[1:]))
    assert all(0 <= u < 16 for u in a.units)
    # at most one unit per latent frame
    assert 0 < len(a) <= (8000 // 200 + 2) // 2
