import csv
import json
from pathlib import Path

import pytest

from unitts import pipeline
from unitts.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from unitts.io import file_sha256, read_symbol_file

TINY = {
    "corpus": {"shard_minutes": "0.2", "eval_utterances": "4"},
    "vqvae": {"steps": "30", "codebook_size": "32", "dim": "16", "hidden": "32", "batch_size": "4"},
    "tts": {"reduction": "3", "embed_dim": "16", "encoder_dim": "16", "prenet_dim": "16", "attention_rnn_dim": "32",
            "decoder_rnn_dim": "32", "attention_dim": "16", "postnet_dim": "16", "batch_size": "4",
            "max_steps": "15"},
    "pretrain": {"steps": "8"},
    "finetune": {"steps": "4"},
    "eval": {"gl_iters": "3", "max_steps": "15"},
}


def write_config(path: Path, toy_root: Path, out: Path, **extra) -> Path:
    cfg = pipeline.ExperimentConfig.default()
    cfg.update(TINY)
    cfg.update({"run": {"out": str(out)}, "corpus": {"external_root": str(toy_root / "external"),
                                                       "target_root": str(toy_root / "target"),
                                                       "lexicon": str(toy_root / "lexicon.txt")}})
    cfg.update(extra)
    path.write_text(cfg.to_ini())
    return path


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    assert main(["make-toy-corpus", "--out", str(root), "--external-minutes", "1.5", "--target-minutes", "1.2"]) == 0
    return root


@pytest.fixture(scope="module")
def pipeline_run(toy_root, tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    cfg = write_config(work / "exp.ini", toy_root, work / "out")
    for cmd in ("train-vqvae", "extract-units", "pretrain", "finetune", "eval"):
        assert main([cmd, "--config", str(cfg)]) == EXIT_OK, cmd
    return cfg, work / "out"


def test_toy_corpus_layout(toy_root):
    assert (toy_root / "toy.ini").exists() and (toy_root / "lexicon.txt").exists()
    assert (toy_root / "target" / "metadata.csv").exists()
    ini = pipeline.ExperimentConfig.load(toy_root / "toy.ini")
    assert ini.get("corpus", "shard_minutes") == 0.4
    assert Path(ini.get("corpus", "external_root")).is_dir()


def test_show_config_prints_every_default(capsys):
    assert main(["show-config"]) == EXIT_OK
    text = capsys.readouterr().out
    for section, items in pipeline.ExperimentConfig.default().sections.items():
        assert f"[{section}]" in text
        for key in items:
            assert f"\n{key} = " in text


def test_show_config_round_trips(tmp_path, capsys):
    main(["show-config", "--toy", "--seed", "7"])
    (tmp_path / "c.ini").write_text(capsys.readouterr().out)
    cfg = pipeline.ExperimentConfig.load(tmp_path / "c.ini")
    assert cfg.seed == 7 and cfg.get("tts", "reduction") == pipeline.TOY_OVERRIDES["tts"]["reduction"]


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["pretrain", "--seed", "x"]) == EXIT_USAGE
    assert main(["show-config", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    (tmp_path / "bad.ini").write_text("[vqvae]\nnot_a_key = 3\n")
    assert main(["show-config", "--config", str(tmp_path / "bad.ini")]) == EXIT_USAGE
    assert main(["sweep", "--shards", "0.3", "--out", str(tmp_path)]) == EXIT_USAGE


def test_missing_upstream_names_producer(tmp_path, capsys):
    assert main(["pretrain", "--out", str(tmp_path)]) == EXIT_DATA
    assert "unitts extract-units" in capsys.readouterr().err


def test_bad_corpus_path_is_data_error(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[corpus]\nexternal_root = {tmp_path / 'nope'}\n[run]\nout = {tmp_path / 'o'}\n")
    assert main(["train-vqvae", "--config", str(cfg)]) == EXIT_DATA


def test_pipeline_artifacts(pipeline_run):
    cfg_path, out = pipeline_run
    cfg = pipeline.ExperimentConfig.load(cfg_path)
    header = (out / "vqvae" / "train_log.csv").read_text().splitlines()[0]
    assert header == "step,recon,codebook,commit,total,codebook_usage"
    seqs = read_symbol_file(out / "units" / "external.units", as_int=True)
    assert seqs and all(a != b for s in seqs.values() for a, b in zip(s, s[1:]))
    meta = json.loads((out / "units" / "external.json").read_text())
    assert meta["config_hash"] == cfg.hash()
    report = json.loads((out / "eval" / "finetune" / "mcd.json").read_text())
    assert report["config_hash"] == cfg.hash() and report["n_utts"] == 4
    assert report["corpus_mcd_db"] > 0
    with open(out / "eval" / "finetune" / "mcd.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    records = sorted((out / "records").glob("*.json"))
    stages = {json.loads(p.read_text())["stage"] for p in records}
    assert stages >= {"train-vqvae", "extract-units", "pretrain", "finetune", "eval"}
    rec = json.loads(records[0].read_text())
    assert {"config_hash", "version", "stage", "wall_time", "artifacts"} <= rec.keys()


def test_rerun_is_idempotent(pipeline_run):
    cfg_path, out = pipeline_run
    before = {p: file_sha256(out / p) for p in ("vqvae/model.ckpt", "units/external.units", "pretrain/model.ckpt")}
    n_records = len(list((out / "records").glob("*.json")))
    for cmd in ("train-vqvae", "extract-units", "pretrain"):
        assert main([cmd, "--config", str(cfg_path)]) == EXIT_OK
    assert before == {p: file_sha256(out / p) for p in before}
    # records are appended, never overwritten
    assert len(list((out / "records").glob("*.json"))) == n_records + 3


def test_eval_refuses_feature_mismatch(pipeline_run, tmp_path, toy_root, capsys):
    _, out = pipeline_run
    cfg = write_config(tmp_path / "c.ini", toy_root, out, features={"hop": "160"})
    assert main(["eval", "--config", str(cfg), "--name", "mismatch"]) == EXIT_DATA
    assert "feature config" in capsys.readouterr().err


def test_synth_writes_wav(pipeline_run, capsys):
    cfg_path, out = pipeline_run
    assert main(["synth", "--config", str(cfg_path), "--ids", "1 2 3"]) == EXIT_OK
    wav = Path(json.loads(capsys.readouterr().out)["wav"])
    assert wav.exists() and wav.stat().st_size > 44
    lex = (Path(pipeline.ExperimentConfig.load(cfg_path).get("corpus", "lexicon"))).read_text().split()[0]
    assert main(["synth", "--config", str(cfg_path), "--text", lex]) == EXIT_OK


def test_sweep_rows_and_plot(pipeline_run):
    cfg_path, out = pipeline_run
    assert main(["sweep", "--config", str(cfg_path), "--shards", "0.5,1,2"]) == EXIT_OK
    rows = pipeline.read_sweep_csv(out / "sweep" / "sweep.csv")
    for variant in ("finetune", "scratch"):
        assert sorted(r["shards"] for r in rows if r["variant"] == variant) == [0.5, 1.0, 2.0]
    trained = {(r["variant"], r["shards"]): int(r["train_utterances"]) for r in rows}
    assert trained[("finetune", 0.5)] < trained[("finetune", 1.0)] < trained[("finetune", 2.0)]
    assert (out / "sweep" / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
