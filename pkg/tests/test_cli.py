from __future__ import annotations

import argparse
import json

import numpy as np
import pytest

from regen_stream import cli
from regen_stream.dsp import StftConfig
from regen_stream.models.generator import Generator, GeneratorConfig
from regen_stream.nn import checkpoint as ckpt_io
from regen_stream.pipeline import ModelBundle, bundle_to_checkpoint
from regen_stream.wavio import read_wav, write_wav

from toys import small_stage1

SUBCOMMANDS = ("enhance", "stream-bench", "train", "synth-data", "eval", "rank", "inspect-ckpt")
SMALL_MODELS = {
    "stage1": {"erb_bands": 8, "conv_channels": 4, "emb": 16, "gru_hidden": 16, "groups": 4, "df_channels": 4},
    "generator": {"hidden": 4, "state_dim": 3, "freq_kernel": 3, "freq_groups": 13, "blocks": 2, "init": "kaiming"},
    "discriminator": {"channels": [2, 4, 4], "down_groups": [1, 2], "first_kernel": 5, "down_kernel": 5,
                      "down_stride": 2, "post_kernel": 3},
}
TINY_TRAIN = {"epochs_stage1": 2, "epochs_stage2": 2, "warmup_epochs": 1, "batch_size": 2, "crop_s": 0.05,
              "samples_per_epoch": 2}


def _write_json(path, data) -> str:
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def kaiming_ckpt(tmp_path_factory) -> str:
    stft = StftConfig()
    gen = Generator(GeneratorConfig(**dict(SMALL_MODELS["generator"], seed=4)), stft)
    bundle = ModelBundle(stft=stft, stage1=small_stage1(3, stft), generator=gen)
    path = tmp_path_factory.mktemp("ck") / "models.ckpt"
    ckpt_io.save(path, bundle_to_checkpoint(bundle))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["synth-data", "--out", str(out), "--n-items", "4", "--duration-s", "0.1", "--seed", "0"]) == 0
    return str(out / "manifest.json")


def _wav(path, rate: int, seconds: float, seed: int = 0) -> str:
    x = 0.1 * np.random.default_rng(seed).standard_normal(int(rate * seconds))
    write_wav(path, x, rate)
    return str(path)


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_exits_zero(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["enhance"])
    assert exc.value.code == cli.EXIT_USAGE


# -- precedence and seeds ----------------------------------------------------------------


def test_three_way_precedence():
    file_cfg = {"batch_size": 4, "epochs_stage1": 7}
    flags = argparse.Namespace(batch_size=3, epochs_stage1=None, lr_max=None)
    assert cli.resolve("batch_size", flags, file_cfg, 8) == 3  # flag wins
    assert cli.resolve("epochs_stage1", flags, file_cfg, 5) == 7  # then file
    assert cli.resolve("lr_max", flags, file_cfg, 1e-2) == 1e-2  # then default
    cfg = cli.train_config_from(argparse.Namespace(batch_size=3), file_cfg, seed=9)
    assert (cfg.batch_size, cfg.epochs_stage1, cfg.lr_max, cfg.seed) == (3, 7, 1e-2, 9)


def test_seed_sources(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    none = argparse.Namespace(seed=None)
    assert cli.resolve_seed(none, {}) == 42
    monkeypatch.setenv(cli.SEED_ENV, "7")
    assert cli.resolve_seed(none, {}) == 7
    assert cli.resolve_seed(none, {"seed": 8}) == 8
    assert cli.resolve_seed(argparse.Namespace(seed=9), {"seed": 8}) == 9
    monkeypatch.setenv(cli.SEED_ENV, "x")
    with pytest.raises(cli.CliError):
        cli.resolve_seed(none, {})


def test_env_seed_echoed(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv(cli.SEED_ENV, "123")
    assert cli.main(["synth-data", "--out", str(tmp_path), "--n-items", "1", "--duration-s", "0.05"]) == 0
    assert "seed: 123" in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 123


def test_config_file_errors(tmp_path, capsys):
    bad = _write_json(tmp_path / "bad.json", {"bogus": 1})
    assert cli.main(["synth-data", "--out", str(tmp_path), "--config", bad]) == cli.EXIT_USAGE
    assert "bogus" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["synth-data", "--out", str(tmp_path), "--config", str(tmp_path / "broken.json")]) == 2
    assert cli.main(["synth-data", "--out", str(tmp_path), "--config", str(tmp_path / "none.json")]) == 3


# -- enhance -----------------------------------------------------------------------------------


def test_enhance_reports_latency_and_modes_differ(kaiming_ckpt, tmp_path, capsys):
    src = _wav(tmp_path / "in.wav", 48000, 0.2)
    outs = {}
    for mode in ("stage1_only", "two_stage"):
        dst = tmp_path / f"{mode}.wav"
        assert cli.main(["enhance", src, str(dst), "--ckpt", kaiming_ckpt, "--mode", mode]) == 0
        err = capsys.readouterr().err
        assert "algorithmic latency: 40.0 ms" in err and "rtf:" in err
        outs[mode] = read_wav(dst)[0]
    assert not np.allclose(outs["stage1_only"], outs["two_stage"])


def test_enhance_16k_round_trip_and_streaming(kaiming_ckpt, tmp_path):
    src = _wav(tmp_path / "in16.wav", 16000, 0.25)
    off, stream = tmp_path / "off.wav", tmp_path / "stream.wav"
    assert cli.main(["enhance", src, str(off), "--ckpt", kaiming_ckpt]) == 0
    assert cli.main(["enhance", src, str(stream), "--ckpt", kaiming_ckpt, "--chunk-ms", "10"]) == 0
    x, rate = read_wav(src)
    a, ra = read_wav(off)
    b, rb = read_wav(stream)
    assert ra == rb == rate == 16000
    assert len(a) == len(b) == len(x)
    assert np.max(np.abs(a - b)) <= 1e-5  # float32 files


def test_enhance_exit_codes(kaiming_ckpt, tmp_path):
    src = _wav(tmp_path / "in.wav", 48000, 0.05)
    assert cli.main(["enhance", str(tmp_path / "missing.wav"), str(tmp_path / "o.wav"),
                     "--ckpt", kaiming_ckpt]) == cli.EXIT_IO
    assert cli.main(["enhance", src, str(tmp_path / "o.wav"), "--ckpt", str(tmp_path / "none.ckpt")]) == cli.EXIT_IO
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint at all")
    assert cli.main(["enhance", src, str(tmp_path / "o.wav"), "--ckpt", str(junk)]) == cli.EXIT_CHECKPOINT
    s1_only = tmp_path / "s1.ckpt"
    ckpt_io.save(s1_only, bundle_to_checkpoint(ModelBundle(stage1=small_stage1(0, StftConfig()))))
    assert cli.main(["enhance", src, str(tmp_path / "o.wav"), "--ckpt", str(s1_only)]) == cli.EXIT_CHECKPOINT
    assert cli.main(["enhance", src, str(tmp_path / "o.wav"), "--ckpt", str(s1_only), "--mode", "stage1_only"]) == 0


def test_stream_bench_report(tmp_path, capsys):
    cfg = _write_json(tmp_path / "c.json", {"stage1": SMALL_MODELS["stage1"], "generator": SMALL_MODELS["generator"]})
    assert cli.main(["stream-bench", "--duration", "1", "--config", cfg, "--seed", "5"]) == 0
    cap = capsys.readouterr()
    rep = json.loads(cap.out)
    assert rep["seed"] == 5 and rep["chunk_samples"] == 480 and rep["rtf"] > 0
    assert "algorithmic latency: 40.0 ms" in cap.err


# -- train -------------------------------------------------------------------------------------


def _train_cfg(tmp_path) -> str:
    return _write_json(tmp_path / "train.json", dict(TINY_TRAIN, **SMALL_MODELS))


def test_train_stage1_deterministic_logs(dataset, tmp_path):
    cfg = _train_cfg(tmp_path)
    logs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.ckpt"
        assert cli.main(["train", "--stage", "1", "--data", dataset, "--out", str(out), "--config", cfg]) == 0
        logs.append((tmp_path / f"{run}.ckpt.log.jsonl").read_bytes())
        ckpt_io.load(out)  # magic and CRC validated
    assert logs[0] == logs[1] and logs[0]
    assert json.loads(logs[0].splitlines()[0])["seed"] == 42


def test_train_stage2_requires_stage1_and_freezes(dataset, tmp_path, capsys):
    cfg = _train_cfg(tmp_path)
    s2 = tmp_path / "s2.ckpt"
    assert cli.main(["train", "--stage", "2", "--data", dataset, "--out", str(s2)]) == cli.EXIT_USAGE
    assert "--stage1-ckpt" in capsys.readouterr().err
    s1 = tmp_path / "s1.ckpt"
    assert cli.main(["train", "--stage", "1", "--data", dataset, "--out", str(s1), "--config", cfg]) == 0
    assert cli.main(["train", "--stage", "2", "--data", dataset, "--out", str(s2), "--config", cfg,
                     "--stage1-ckpt", str(s1), "--max-steps", "3", "--micro-batch", "1", "--epochs-stage2", "5"]) == 0
    recs = [json.loads(s) for s in (tmp_path / "s2.ckpt.log.jsonl").read_text().splitlines()]
    steps = [r for r in recs if "step" in r]
    assert len(steps) == 3 and all(r["stage1_updates"] == 0 for r in steps)
    assert recs[-1]["stage1_hash_before"] == recs[-1]["stage1_hash_after"]
    assert cli.main(["train", "--stage", "1", "--data", str(tmp_path / "nope.json"), "--out", str(s1)]) == 3
    assert cli.main(["train", "--stage", "1", "--data", dataset, "--out", str(s1), "--batch-size", "0"]) == 2


# -- eval / rank / inspect ----------------------------------------------------------------------


def test_eval_and_rank(tmp_path, capsys):
    _wav(tmp_path / "ref.wav", 16000, 0.2, 0)
    ref = read_wav(tmp_path / "ref.wav")[0]
    write_wav(tmp_path / "noisy.wav", ref + 0.01 * np.random.default_rng(1).standard_normal(len(ref)), 16000)
    man = tmp_path / "m.csv"
    man.write_text("ref,est,model\nref.wav,ref.wav,clean\nref.wav,noisy.wav,noisy\n")
    out, table = tmp_path / "e.csv", tmp_path / "t.csv"
    assert cli.main(["eval", str(man), "--out", str(out), "--table-out", str(table), "--jobs", "2"]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "ref,est,lsd_db,sdr_db,si_sdr_db"
    first = rows[1].split(",")
    assert float(first[2]) == 0.0 and float(first[4]) == 50.0
    rank_out = tmp_path / "r.csv"
    assert cli.main(["rank", str(table), "--out", str(rank_out), "--pretty"]) == 0
    assert rank_out.read_text().splitlines()[1].split(",")[1] == "clean"
    assert "overall" in capsys.readouterr().err


def test_eval_manifest_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("ref,est\na.wav\n")
    assert cli.main(["eval", str(bad)]) == cli.EXIT_USAGE
    assert "line 2" in capsys.readouterr().err
    missing = tmp_path / "missing.csv"
    missing.write_text("ref,est\na.wav,b.wav\n")
    assert cli.main(["eval", str(missing)]) == cli.EXIT_IO


def test_rank_hand_table_and_errors(tmp_path, capsys):
    t = tmp_path / "t.csv"
    t.write_text("model,metric,category,direction,value\n"
                 "a,sdr,intrusive,higher_better,10\nb,sdr,intrusive,higher_better,12\nc,sdr,intrusive,higher_better,8\n"
                 "a,lsd,nonintrusive,lower_better,1.0\nb,lsd,nonintrusive,lower_better,2.0\n"
                 "c,lsd,nonintrusive,lower_better,3.0\n")
    assert cli.main(["rank", str(t)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split(",")[1:3] for ln in lines[1:]] == [["a", "1.5000"], ["b", "1.5000"], ["c", "3.0000"]]
    t.write_text("model,metric,category,direction,value\na,sdr,intrusive,higher_better,1\n"
                 "b,sdr,intrusive,higher_better,2\nb,lsd,intrusive,lower_better,1\n")
    assert cli.main(["rank", str(t)]) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "'a'" in err and "'lsd'" in err


def test_inspect_ckpt(kaiming_ckpt, capsys):
    assert cli.main(["inspect-ckpt", kaiming_ckpt, "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["params"]["discriminator"] == 0 and rep["params"]["stage1"] > 0
    assert rep["source"]["algorithmic_latency_ms"] == 40.0
    assert cli.main(["inspect-ckpt", "--preset", "paper"]) == 0
    assert "3.58" in capsys.readouterr().out
    assert cli.main(["inspect-ckpt"]) == cli.EXIT_USAGE
