"""DTW-aligned mel-cepstral distortion between reference and synthesized speech."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .signal import FrameConfig, Waveform, cepstra

log = logging.getLogger(__name__)

MCD_CONST = 10.0 / math.log(10.0)
N_MCD_COEFFS = 13
# leading/trailing samples quieter than this fraction of the peak are trimmed
TRIM_RELATIVE = 1e-3


@dataclass(frozen=True)
class EvalConfig:
    """Analysis settings for cepstra used only in evaluation."""

    frame: FrameConfig = FrameConfig()
    n_mels: int = 40
    n_coeffs: int = N_MCD_COEFFS
    trim_relative: float = TRIM_RELATIVE

    def to_dict(self) -> dict:
        return {"frame": self.frame.to_dict(), "n_mels": self.n_mels, "n_coeffs": self.n_coeffs,
                "trim_relative": self.trim_relative}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class McdResult:
    mcd_db: float
    path_length: int
    ref_frames: int = 0
    syn_frames: int = 0
    per_utterance: list[dict] = field(default_factory=list)


def dtw(a, b, cost=None):
    """Optimal monotone alignment with steps (1,0), (0,1), (1,1).

    ``cost(a, b)`` must return the full ``(len(a), len(b))`` distance matrix;
    the default is Euclidean.  Returns ``(path, total_cost)`` with ``path`` an
    ``(n, 2)`` array of index pairs from ``(0, 0)`` to ``(len(a)-1, len(b)-1)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidInputError("dtw inputs must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("dtw inputs must have the same frame width")
    dist = euclidean_cost(a, b) if cost is None else np.asarray(cost(a, b), dtype=np.float64)
    acc = _kernels.dtw_accumulate(dist)
    path = _kernels.dtw_backtrack(acc)
    return path, float(acc[-1, -1])


def euclidean_cost(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def mcd_cost(a, b):
    """Pairwise :func:`mcd_frame` between all rows of ``a`` and ``b``."""
    return MCD_CONST * np.sqrt(2.0 * ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def mcd_frame(c, c_other) -> float:
    """``(10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2)`` over c1..c13."""
    c = np.asarray(c, dtype=np.float64)
    c_other = np.asarray(c_other, dtype=np.float64)
    if c.shape != (N_MCD_COEFFS,) or c_other.shape != (N_MCD_COEFFS,):
        raise InvalidInputError(f"mcd_frame expects two vectors of length {N_MCD_COEFFS}")
    return float(MCD_CONST * math.sqrt(2.0 * float(((c - c_other) ** 2).sum())))


def trim_silence(w: Waveform, relative: float = TRIM_RELATIVE) -> Waveform:
    x = w.samples
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return w
    loud = np.flatnonzero(np.abs(x) > relative * peak)
    return Waveform(x[loud[0] : loud[-1] + 1], w.sample_rate)


def mcd_cepstra(w: Waveform, cfg: EvalConfig = EvalConfig()) -> np.ndarray:
    """c1..c13 of the silence-trimmed waveform (c0 excluded).

    Coefficients are in log-amplitude cepstrum units,
    ``c_k = (1/M) sum_m log|A_m| cos(pi k (m + 1/2) / M)`` over M mel bands,
    the scale the MCD constant assumes.  The orthonormal DCT of log power
    is larger by ``2 sqrt(2M)``.
    """
    w = trim_silence(w, cfg.trim_relative)
    if len(w) < cfg.frame.window_len:
        w = Waveform(np.pad(w.samples, (0, cfg.frame.window_len - len(w))), w.sample_rate)
    c = cepstra(w, cfg.frame, cfg.n_coeffs + 1, cfg.n_mels)[:, 1:]
    return c / (2.0 * math.sqrt(2.0 * cfg.n_mels))


def mcd_from_cepstra(ref, syn) -> McdResult:
    path, total = dtw(ref, syn, mcd_cost)
    return McdResult(total / len(path), len(path), len(ref), len(syn))


def mcd_dtw(ref: Waveform, syn: Waveform, cfg: EvalConfig = EvalConfig()) -> McdResult:
    if ref.sample_rate != syn.sample_rate:
        raise InvalidInputError("reference and synthesis sample rates differ")
    return mcd_from_cepstra(mcd_cepstra(ref, cfg), mcd_cepstra(syn, cfg))


# ---------------------------------------------------------------- corpus level

CSV_COLUMNS = ["utterance_id", "mcd_db", "ref_frames", "syn_frames", "path_length"]


def evaluate_pairs(pairs, synthesize_fn, cfg: EvalConfig = EvalConfig()) -> McdResult:
    """Corpus MCD over ``[(utterance_id, reference Waveform, payload), ...]``.

    ``synthesize_fn(payload)`` returns a Waveform.  Utterances whose synthesis
    raises are logged and recorded with ``mcd_db = nan`` and excluded from the
    mean.
    """
    rows = []
    for utt, ref, payload in pairs:
        try:
            res = mcd_dtw(ref, synthesize_fn(payload), cfg)
        except Exception as exc:  # noqa: BLE001 - any synthesis failure is reported per utterance
            log.warning("synthesis failed for %s: %s", utt, exc)
            rows.append({"utterance_id": utt, "mcd_db": float("nan"), "ref_frames": 0, "syn_frames": 0,
                         "path_length": 0, "error": str(exc)})
            continue
        rows.append({"utterance_id": utt, "mcd_db": res.mcd_db, "ref_frames": res.ref_frames,
                     "syn_frames": res.syn_frames, "path_length": res.path_length})
    return aggregate(rows)


def aggregate(rows: list[dict]) -> McdResult:
    ok = [r for r in rows if not math.isnan(r["mcd_db"])]
    if not ok:
        raise InvalidInputError("no utterance could be evaluated")
    # sorted summation keeps the mean independent of utterance order
    values = sorted(r["mcd_db"] for r in ok)
    return McdResult(math.fsum(values) / len(values), sum(r["path_length"] for r in ok), per_utterance=rows)


def write_report(out_dir, result: McdResult, config_hash: str, extra: dict | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "mcd.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in result.per_utterance:
            w.writerow([r["utterance_id"], f"{r['mcd_db']:.6f}", r["ref_frames"], r["syn_frames"], r["path_length"]])
    n_ok = sum(1 for r in result.per_utterance if not math.isnan(r["mcd_db"]))
    summary = {"corpus_mcd_db": round(result.mcd_db, 6), "n_utts": n_ok, "config_hash": config_hash,
               "n_failed": len(result.per_utterance) - n_ok, **(extra or {})}
    json_path = out_dir / "mcd.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return json_path, csv_path


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{**r, "mcd_db": float(r["mcd_db"]), "path_length": int(r["path_length"])} for r in csv.DictReader(fh)]
