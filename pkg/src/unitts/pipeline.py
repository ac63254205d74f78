"""Experiment stages: config handling, artifact layout, run records.

Every stage reads its inputs from the output directory, writes its artifacts
there, and leaves an immutable JSON run record under ``records/``.  Artifacts
that depend on the configuration carry its hash.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io as _io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__, data, evaluation, tts, units, vq
from .errors import DataError, InvalidInputError, MissingArtifactError
from .io import file_sha256, read_symbol_file, read_wav, write_symbol_file, write_wav
from .signal import FrameConfig, mel_spectrogram, mfcc

log = logging.getLogger(__name__)


class ConfigError(InvalidInputError):
    """Malformed configuration file or override."""


class ConfigMismatchError(DataError):
    """An artifact was produced under a different feature configuration."""


# ---------------------------------------------------------------- config

_TTS_KEYS = [f.name for f in fields(tts.TtsConfig) if f.name not in ("steps", "seed", "n_mels")]
_VQ_KEYS = [f.name for f in fields(vq.VqConfig) if f.name != "seed"]


def _defaults() -> dict[str, dict]:
    vqc, ttc, fc = vq.VqConfig(), tts.TtsConfig(), FrameConfig()
    return {
        "run": {"seed": 0, "out": "runs/default", "workers": 1},
        "corpus": {
            "external_root": "", "external_layout": "vctk", "target_root": "", "target_layout": "ljspeech",
            "target_speaker": "target", "lexicon": "", "language": "en", "word_boundary": "_",
            "eval_utterances": 20, "eval_split_seed": 1234, "shard_minutes": 24.0,
        },
        "features": {"sample_rate": 16000, **fc.to_dict(), "n_mels": ttc.n_mels, "mfcc_mels": 40},
        "vqvae": {k: getattr(vqc, k) for k in _VQ_KEYS},
        "tts": {k: getattr(ttc, k) for k in _TTS_KEYS},
        "pretrain": {"steps": 1000},
        "finetune": {"steps": 400, "scale_steps": False, "shards": 1.0, "fresh_speaker": True,
                     "guided_attention": 0.0},
        "eval": {"n_mels": 40, "gl_iters": 60, "max_steps": 400},
        "sweep": {"shards": "0.5,1,2", "variants": "finetune,scratch"},
    }


# desk-scale settings used with the bundled toy corpus
TOY_OVERRIDES = {
    "corpus": {"shard_minutes": 0.4, "eval_utterances": 20},
    "vqvae": {"steps": 1500},
    "tts": {"reduction": 3, "embed_dim": 64, "encoder_dim": 64, "prenet_dim": 64, "attention_rnn_dim": 128,
            "decoder_rnn_dim": 128, "attention_dim": 64, "postnet_dim": 64, "max_steps": 80,
            "guided_attention": 1.0},
    "pretrain": {"steps": 1000},
    "finetune": {"steps": 600, "scale_steps": True},
    "eval": {"gl_iters": 30, "max_steps": 80},
    "sweep": {"shards": "0.5,1,3"},
}


def _coerce(section: str, key: str, raw, default):
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


@dataclass
class ExperimentConfig:
    sections: dict

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(_defaults())

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        cfg = cls.default()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            parser = configparser.ConfigParser(interpolation=None)
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            base = path.parent
            cfg.update({s: dict(parser[s]) for s in parser.sections()})
            # relative corpus paths are resolved against the config file
            for key in ("external_root", "target_root", "lexicon"):
                value = cfg.sections["corpus"][key]
                if value and not Path(value).is_absolute():
                    cfg.sections["corpus"][key] = str((base / value).resolve())
        if overrides:
            cfg.update(overrides)
        return cfg

    def update(self, values: dict) -> None:
        defaults = _defaults()
        for section, items in values.items():
            if section not in defaults:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in items.items():
                if key not in defaults[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                self.sections[section][key] = _coerce(section, key, raw, defaults[section][key])

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, items in self.sections.items():
            parser[section] = {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in items.items()}
        buf = _io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        """Digest of everything that affects results (output dir and workers excluded)."""
        payload = {s: dict(v) for s, v in self.sections.items()}
        payload["run"] = {"seed": payload["run"]["seed"]}
        payload["corpus"] = {k: v for k, v in payload["corpus"].items() if not k.endswith(("_root", "lexicon"))}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    # -- typed views
    @property
    def seed(self) -> int:
        return int(self.sections["run"]["seed"])

    @property
    def out(self) -> Path:
        return Path(self.sections["run"]["out"])

    @property
    def workers(self) -> int:
        return max(1, int(self.sections["run"]["workers"]))

    def frame_config(self) -> FrameConfig:
        f = self.sections["features"]
        return FrameConfig(f["fft_size"], f["hop"], f["window_len"], f["window"])

    def features_hash(self) -> str:
        blob = json.dumps(self.sections["features"], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def vq_config(self) -> vq.VqConfig:
        return vq.VqConfig(**self.sections["vqvae"], seed=self.seed)

    def tts_config(self, steps: int) -> tts.TtsConfig:
        values = {**self.sections["tts"], "n_mels": self.sections["features"]["n_mels"]}
        return tts.TtsConfig(**values, steps=steps, seed=self.seed)

    def eval_config(self) -> evaluation.EvalConfig:
        return evaluation.EvalConfig(self.frame_config(), n_mels=self.sections["eval"]["n_mels"])

    def validate_paths(self, *keys: str) -> None:
        for key in keys:
            value = self.sections["corpus"][key]
            if not value:
                raise ConfigError(f"[corpus] {key} is not set")
            if not Path(value).exists():
                raise DataError(f"[corpus] {key}: {value} does not exist")


def parse_shards(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        values = [float(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"cannot parse shard list {text!r}") from None
    if not values or any(v <= 0 or abs(v * 2 - round(v * 2)) > 1e-9 for v in values):
        raise ConfigError(f"shard amounts must be positive multiples of 0.5, got {text!r}")
    return values


# ---------------------------------------------------------------- run records


def code_version() -> str:
    """Package version plus a digest of the installed sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+g{h.hexdigest()[:10]}"


@dataclass(frozen=True)
class RunRecord:
    stage: str
    config_hash: str
    version: str
    seed: int
    wall_time: float
    artifacts: dict

    def write(self, out_dir) -> Path:
        """Write under ``records/``; existing records are never overwritten."""
        rec_dir = Path(out_dir) / "records"
        rec_dir.mkdir(parents=True, exist_ok=True)
        n = 0
        while True:
            path = rec_dir / f"{self.stage}-{n:04d}.json"
            try:
                with open(path, "x", encoding="utf-8") as fh:
                    json.dump(asdict(self), fh, indent=2, sort_keys=True)
                    fh.write("\n")
                return path
            except FileExistsError:
                n += 1


class _Stage:
    def __init__(self, name: str, cfg: ExperimentConfig):
        self.name, self.cfg = name, cfg
        self.t0 = time.perf_counter()
        self.artifacts: dict = {}

    def finish(self) -> RunRecord:
        rec = RunRecord(self.name, self.cfg.hash(), code_version(), self.cfg.seed,
                        round(time.perf_counter() - self.t0, 3), {k: str(v) for k, v in self.artifacts.items()})
        rec.write(self.cfg.out)
        log.info("%s finished in %.1fs", self.name, rec.wall_time)
        return rec


# ---------------------------------------------------------------- artifact layout


def paths(cfg: ExperimentConfig) -> dict[str, Path]:
    o = cfg.out
    return {
        "external_manifest": o / "manifests" / "external.txt",
        "target_manifest": o / "manifests" / "target.txt",
        "eval_manifest": o / "manifests" / "eval.txt",
        "pool_manifest": o / "manifests" / "pool.txt",
        "vqvae": o / "vqvae" / "model.ckpt",
        "vqvae_log": o / "vqvae" / "train_log.csv",
        "units": o / "units" / "external.units",
        "units_meta": o / "units" / "external.json",
        "phonemes": o / "phonemes" / "target.txt",
        "pretrain": o / "pretrain" / "model.ckpt",
        "finetune": o / "finetune" / "model.ckpt",
        "scratch": o / "scratch" / "model.ckpt",
        "eval": o / "eval",
        "sweep": o / "sweep",
        "synth": o / "synth",
    }


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def _json_dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- corpora and features


def external_manifest(cfg: ExperimentConfig) -> data.Manifest:
    p = paths(cfg)["external_manifest"]
    if p.exists():
        return data.read_manifest(p)
    cfg.validate_paths("external_root")
    c = cfg.sections["corpus"]
    m = data.ingest_corpus(c["external_root"], data.Layout(c["external_layout"], speaker="external"),
                           name="external", language=c["language"], workers=cfg.workers)
    data.write_manifest(p, m)
    return m


def target_split(cfg: ExperimentConfig) -> tuple[data.Manifest, data.Manifest]:
    """Held-out evaluation utterances and the paired-data pool they are excluded from."""
    pp = paths(cfg)
    if pp["eval_manifest"].exists() and pp["pool_manifest"].exists():
        return data.read_manifest(pp["eval_manifest"]), data.read_manifest(pp["pool_manifest"])
    cfg.validate_paths("target_root")
    c = cfg.sections["corpus"]
    m = data.ingest_corpus(c["target_root"], data.Layout(c["target_layout"], speaker=c["target_speaker"]),
                           name="target", language=c["language"], workers=cfg.workers)
    m = data.Manifest([r for r in m.records if r.text], m.name, m.language, m.sample_rate)
    n_eval = int(c["eval_utterances"])
    if len(m) <= n_eval:
        raise DataError(f"target corpus has {len(m)} transcribed utterances; need more than {n_eval}")
    perm = np.random.default_rng(int(c["eval_split_seed"])).permutation(len(m))
    ids = m.ids()
    eval_ids = sorted(ids[i] for i in perm[:n_eval])
    pool_ids = sorted(ids[i] for i in perm[n_eval:])
    data.write_manifest(pp["target_manifest"], m)
    data.write_manifest(pp["eval_manifest"], m.subset(eval_ids))
    data.write_manifest(pp["pool_manifest"], m.subset(pool_ids))
    return m.subset(eval_ids), m.subset(pool_ids)


_FEATURE_CACHE: dict = {}


def _features(records, kind: str, cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    """MFCC or log-mel matrices keyed by utterance id (memoised per process)."""
    fc = cfg.frame_config()
    f = cfg.sections["features"]

    def one(r):
        key = (r.audio_path, kind, cfg.features_hash())
        if key not in _FEATURE_CACHE:
            w = read_wav(r.audio_path)
            if w.sample_rate != f["sample_rate"]:
                raise DataError(f"{r.audio_path}: sample rate {w.sample_rate} != {f['sample_rate']}")
            if kind == "mfcc":
                _FEATURE_CACHE[key] = mfcc(w, fc, f["mfcc_mels"]).frames
            else:
                _FEATURE_CACHE[key] = mel_spectrogram(w, fc, f["n_mels"]).frames
        return r.utterance_id, _FEATURE_CACHE[key]

    records = list(records)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return dict(pool.map(one, records))
    return dict(map(one, records))


def lexicon(cfg: ExperimentConfig) -> data.Lexicon:
    cfg.validate_paths("lexicon")
    return data.Lexicon.load(cfg.sections["corpus"]["lexicon"])


def phoneme_sequences(cfg: ExperimentConfig) -> tuple[tts.SymbolTable, dict[str, list[str]]]:
    """Phonemised target transcripts (written once) and the phoneme table covering them."""
    p = paths(cfg)["phonemes"]
    lex = lexicon(cfg)
    if p.exists():
        seqs = read_symbol_file(p)
    else:
        eval_m, pool_m = target_split(cfg)
        wb = cfg.sections["corpus"]["word_boundary"] or None
        seqs = {}
        for r in list(eval_m) + list(pool_m):
            try:
                seqs[r.utterance_id] = data.phonemize(r.text, lex, wb)
            except InvalidInputError as exc:
                log.warning("dropping %s: %s", r.utterance_id, exc)
        write_symbol_file(p, dict(sorted(seqs.items())))
    wb = cfg.sections["corpus"]["word_boundary"]
    symbols = set(lex.phone_set()) | set(data.KEPT_PUNCTUATION) | ({wb} if wb else set())
    for s in seqs.values():
        symbols.update(s)
    return tts.SymbolTable.build("phoneme", sorted(symbols)), seqs


# ---------------------------------------------------------------- stages


def stage_train_vqvae(cfg: ExperimentConfig) -> RunRecord:
    st = _Stage("train-vqvae", cfg)
    pp = paths(cfg)
    m = external_manifest(cfg)
    feats = _features(m, "mfcc", cfg)
    torch.set_num_threads(1)
    model, _ = vq.train_vqvae([(r.speaker_id, feats[r.utterance_id]) for r in m], cfg.vq_config(), pp["vqvae_log"])
    digest = vq.save_vqvae(pp["vqvae"], model, {"config_hash": cfg.hash(), "features_hash": cfg.features_hash(),
                                                "seed": cfg.seed})
    st.artifacts.update(checkpoint=pp["vqvae"], log=pp["vqvae_log"], sha256=digest)
    return st.finish()


def stage_extract_units(cfg: ExperimentConfig) -> RunRecord:
    st = _Stage("extract-units", cfg)
    pp = paths(cfg)
    model, meta = vq.load_vqvae(_require(pp["vqvae"], "train-vqvae"))
    _check_features(cfg, meta, pp["vqvae"])
    m = external_manifest(cfg)
    feats = _features(m, "mfcc", cfg)
    codebook = model.get_codebook()
    seqs = []
    for r in m:
        idx, _ = vq.quantize_sequence(vq.encode(model, feats[r.utterance_id]), codebook)
        seqs.append(units.UnitSequence(r.utterance_id, tuple(units.collapse_repeats(idx))))
    units.write_unit_file(pp["units"], seqs)
    inv = units.unit_stats(seqs, codebook.size)
    _json_dump(pp["units_meta"], {
        "config_hash": cfg.hash(), "features_hash": cfg.features_hash(), "vqvae_sha256": file_sha256(pp["vqvae"]),
        "codebook_size": codebook.size, "perplexity": round(inv.perplexity, 6), "coverage": inv.coverage,
        "n_utterances": len(seqs), "n_units": inv.total,
    })
    st.artifacts.update(units=pp["units"], meta=pp["units_meta"])
    return st.finish()


def _check_features(cfg: ExperimentConfig, meta: dict, path) -> None:
    got = meta.get("features_hash")
    if got is not None and got != cfg.features_hash():
        raise ConfigMismatchError(
            f"{path} was produced with feature config {got}, current config is {cfg.features_hash()}"
        )


def _save_tts(path, trainer: tts.Trainer, cfg: ExperimentConfig, extra: dict | None = None) -> str:
    trainer.meta.update({"config_hash": cfg.hash(), "features_hash": cfg.features_hash(), **(extra or {})})
    return tts.save_model(path, trainer.model, trainer.phase, trainer.step, trainer.meta)


def stage_pretrain(cfg: ExperimentConfig) -> RunRecord:
    st = _Stage("pretrain", cfg)
    pp = paths(cfg)
    _require(pp["units"], "extract-units")
    unit_meta = json.loads(_require(pp["units_meta"], "extract-units").read_text())
    _check_features(cfg, unit_meta, pp["units"])
    seqs = read_symbol_file(pp["units"], as_int=True)
    m = external_manifest(cfg)
    mels = _features(m, "mel", cfg)
    table = tts.SymbolTable.for_units(int(unit_meta["codebook_size"]))
    speakers = m.speakers()
    examples = [tts.Example(r.utterance_id, table.encode(seqs[r.utterance_id]), mels[r.utterance_id],
                            speakers.index(r.speaker_id))
                for r in m if seqs.get(r.utterance_id)]
    if not examples:
        raise DataError("no utterance has both audio and units")
    torch.set_num_threads(1)
    tc = cfg.tts_config(int(cfg.get("pretrain", "steps")))
    model = tts.new_model(tc, table, speakers, [e.mel for e in examples])
    trainer = tts.train(model, examples, phase="pretrain")
    digest = _save_tts(pp["pretrain"], trainer, cfg, {"units_sha256": file_sha256(pp["units"])})
    st.artifacts.update(checkpoint=pp["pretrain"], sha256=digest)
    return st.finish()


def _paired_examples(cfg: ExperimentConfig, n_shards: float, table: tts.SymbolTable, seqs: dict):
    _, pool = target_split(cfg)
    subset = data.shard_prefix(pool, n_shards, float(cfg.get("corpus", "shard_minutes")), cfg.seed)
    pairs = data.pair_dataset(subset, seqs)
    mels = _features(subset, "mel", cfg)
    return [tts.Example(p.utterance_id, table.encode(p.symbols), mels[p.utterance_id], 0) for p in pairs], subset


def train_variant(cfg: ExperimentConfig, variant: str, n_shards: float, out_path: Path) -> tuple[str, dict]:
    """Fine-tune the pretrained model or train from scratch on ``n_shards`` of paired data."""
    table, seqs = phoneme_sequences(cfg)
    examples, subset = _paired_examples(cfg, n_shards, table, seqs)
    steps = int(cfg.get("finetune", "steps"))
    if cfg.get("finetune", "scale_steps"):
        # same number of passes over the data at every amount
        steps = max(1, round(steps * n_shards))
    # the alignment prior is a pretraining aid; paired-data training uses its own weight
    ga = float(cfg.get("finetune", "guided_attention"))
    torch.set_num_threads(1)
    info = {"shards": n_shards, "train_utterances": len(examples), "train_seconds": round(subset.total_duration, 6),
            "train_steps": steps}
    if variant == "finetune":
        pretrained, meta = tts.load_model(_require(paths(cfg)["pretrain"], "pretrain"))
        _check_features(cfg, meta, paths(cfg)["pretrain"])
        trainer = tts.finetune(pretrained, table, examples, steps=steps,
                               fresh_speaker=bool(cfg.get("finetune", "fresh_speaker")), seed=cfg.seed,
                               guided_attention=ga)
        info["pretrain_sha256"] = file_sha256(paths(cfg)["pretrain"])
    elif variant == "scratch":
        model = tts.new_model(replace(cfg.tts_config(steps), guided_attention=ga), table,
                              [cfg.get("corpus", "target_speaker")], [e.mel for e in examples])
        trainer = tts.train(model, examples, phase="scratch")
    else:
        raise ConfigError(f"unknown model variant {variant!r}")
    return _save_tts(out_path, trainer, cfg, info), info


def stage_finetune(cfg: ExperimentConfig, variant: str = "finetune", n_shards: float | None = None) -> RunRecord:
    st = _Stage(variant, cfg)
    n_shards = float(cfg.get("finetune", "shards")) if n_shards is None else n_shards
    out = paths(cfg)[variant]
    digest, info = train_variant(cfg, variant, n_shards, out)
    st.artifacts.update(checkpoint=out, sha256=digest, **info)
    return st.finish()


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path) -> evaluation.McdResult:
    model, meta = tts.load_model(checkpoint)
    _check_features(cfg, meta, checkpoint)
    if meta.get("symbol_kind") != "phoneme":
        raise DataError(f"{checkpoint} takes {meta.get('symbol_kind')} input; evaluation needs a phoneme model")
    table, seqs = phoneme_sequences(cfg)
    if model.symbol_table.digest() != table.digest():
        raise ConfigMismatchError(f"{checkpoint} was trained with a different phoneme table")
    eval_m, _ = target_split(cfg)
    fc, sr = cfg.frame_config(), int(cfg.get("features", "sample_rate"))
    ecfg = cfg.eval_config()
    gl_iters, max_steps = int(cfg.get("eval", "gl_iters")), int(cfg.get("eval", "max_steps"))
    pairs = [(r.utterance_id, read_wav(r.audio_path), table.encode(seqs[r.utterance_id]))
             for r in eval_m if r.utterance_id in seqs]
    if not pairs:
        raise DataError("no evaluation utterance has a phoneme sequence")
    torch.set_num_threads(1)

    def synth(ids):
        return tts.synthesize(model, ids, None, max_steps, cfg.seed, fc, sr, gl_iters)

    result = evaluation.evaluate_pairs(pairs, synth, ecfg)
    evaluation.write_report(out_dir, result, cfg.hash(), {
        "eval_config_hash": ecfg.digest(), "eval_config": ecfg.to_dict(), "checkpoint_sha256": file_sha256(checkpoint),
        "phase": meta.get("phase"), "seed": cfg.seed, "gl_iters": gl_iters,
    })
    return result


def stage_eval(cfg: ExperimentConfig, checkpoint=None, name: str | None = None) -> RunRecord:
    st = _Stage("eval", cfg)
    ckpt = Path(checkpoint) if checkpoint else _require(paths(cfg)["finetune"], "finetune")
    if not ckpt.exists():
        raise MissingArtifactError(ckpt, "finetune")
    out_dir = paths(cfg)["eval"] / (name or ckpt.parent.name)
    result = evaluate_checkpoint(cfg, ckpt, out_dir)
    st.artifacts.update(report=out_dir / "mcd.json", per_utterance=out_dir / "mcd.csv",
                        corpus_mcd_db=round(result.mcd_db, 6))
    return st.finish()


SWEEP_COLUMNS = ["variant", "shards", "train_utterances", "train_seconds", "train_steps", "corpus_mcd_db", "n_utts"]


def stage_sweep(cfg: ExperimentConfig, shards=None) -> RunRecord:
    st = _Stage("sweep", cfg)
    shard_list = parse_shards(cfg.get("sweep", "shards") if shards is None else shards)
    variants = [v.strip() for v in str(cfg.get("sweep", "variants")).split(",") if v.strip()]
    if "finetune" in variants:
        _require(paths(cfg)["pretrain"], "pretrain")
    root = paths(cfg)["sweep"]
    rows = []
    for k in shard_list:
        for variant in variants:
            run_dir = root / variant / f"shards_{k:g}"
            _, info = train_variant(cfg, variant, k, run_dir / "model.ckpt")
            res = evaluate_checkpoint(cfg, run_dir / "model.ckpt", run_dir)
            n_ok = sum(1 for r in res.per_utterance if not math.isnan(r["mcd_db"]))
            rows.append({"variant": variant, "shards": k, "train_utterances": info["train_utterances"],
                         "train_seconds": info["train_seconds"], "train_steps": info["train_steps"],
                         "corpus_mcd_db": round(res.mcd_db, 6),
                         "n_utts": n_ok})
            log.info("sweep %s @ %g shards: %.3f dB", variant, k, res.mcd_db)
    csv_path = root / "sweep.csv"
    write_sweep_csv(csv_path, rows)
    png = plot_sweep(rows, root / "sweep.png")
    st.artifacts.update(csv=csv_path, plot=png)
    return st.finish()


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "shards": f"{r['shards']:g}"})


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{**r, "shards": float(r["shards"]), "corpus_mcd_db": float(r["corpus_mcd_db"])}
                for r in csv.DictReader(fh)]


def plot_sweep(rows: list[dict], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for variant in dict.fromkeys(r["variant"] for r in rows):
        pts = sorted((r["shards"], r["corpus_mcd_db"]) for r in rows if r["variant"] == variant)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=variant)
    ax.set_xlabel("paired data (shards)")
    ax.set_ylabel("MCD (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def stage_synth(cfg: ExperimentConfig, text: str | None = None, ids: str | None = None, checkpoint=None) -> RunRecord:
    """Synthesize from text (phoneme model) or space-separated unit ids (unit model)."""
    if (text is None) == (ids is None):
        raise ConfigError("synth needs exactly one of --text or --ids")
    st = _Stage("synth", cfg)
    default = paths(cfg)["finetune" if text is not None else "pretrain"]
    ckpt = Path(checkpoint) if checkpoint else default
    if not ckpt.exists():
        raise MissingArtifactError(ckpt, "finetune" if text is not None else "pretrain")
    model, meta = tts.load_model(ckpt)
    _check_features(cfg, meta, ckpt)
    table = model.symbol_table
    if text is not None:
        if table.kind == "unit":
            raise ConfigError(f"{ckpt} takes unit ids; use --ids")
        wb = cfg.get("corpus", "word_boundary") or None
        symbol_ids = table.encode(data.phonemize(text, lexicon(cfg), wb))
        label = text
    else:
        try:
            symbol_ids = table.encode(ids.split())
        except ValueError:
            raise ConfigError("--ids must be space-separated symbols") from None
        label = ids
    fc, sr = cfg.frame_config(), int(cfg.get("features", "sample_rate"))
    torch.set_num_threads(1)
    wav = tts.synthesize(model, symbol_ids, None, int(cfg.get("eval", "max_steps")), cfg.seed, fc, sr,
                         int(cfg.get("eval", "gl_iters")))
    out = paths(cfg)["synth"] / f"{hashlib.sha256(label.encode()).hexdigest()[:12]}.wav"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, wav)
    st.artifacts.update(wav=out, text=label, checkpoint=ckpt)
    return st.finish()
