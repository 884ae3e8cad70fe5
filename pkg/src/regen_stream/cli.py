"""Command-line interface.

Exit codes: 0 success, 1 runtime failure (e.g. diverged training), 2 bad
arguments or malformed input tables, 3 I/O error, 4 checkpoint error.

Configuration precedence is flag > JSON config file > default. The seed is
taken from ``--seed``, then the config file, then ``REGEN_STREAM_SEED``, then 42.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pipeline
from .dsp import StftConfig, algorithmic_latency_ms, resample
from .errors import CheckpointError, ConfigMismatchError, TrainingError, UnsupportedRateError
from .eval import lsd, rank_models, read_metric_table, sdr, si_sdr
from .eval.ranking import CSV_HEADER, MetricTableError
from .models.discriminator import DiscriminatorConfig
from .models.generator import GeneratorConfig
from .models.params import ParamReport, count_params, paper_report
from .models.stage1 import Stage1Config
from .nn import checkpoint as ckpt_io
from .train import TrainConfig, load_dataset, save_dataset, synth_dataset, train_stage1, train_stage2
from .wavio import read_wav, write_wav

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_IO, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
DEFAULT_SEED = 42
SEED_ENV = "REGEN_STREAM_SEED"

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
MODEL_SECTIONS = {"stage1": Stage1Config, "generator": GeneratorConfig, "discriminator": DiscriminatorConfig}
CONFIG_KEYS = frozenset(TRAIN_KEYS) | set(MODEL_SECTIONS) | {
    "mode", "chunk_ms", "jobs", "n_items", "duration_s", "max_steps", "micro_batch"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        self.code = code
        super().__init__(message)


def _usage(msg: str) -> CliError:
    return CliError(msg, EXIT_USAGE)


# -- configuration ---------------------------------------------------------------


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config file {path!r}: {exc.strerror}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise _usage(f"config file {path!r} is not valid JSON (line {exc.lineno}): {exc.msg}") from None
    if not isinstance(data, dict):
        raise _usage(f"config file {path!r} must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise _usage(f"config file {path!r} has unknown keys: {', '.join(unknown)}")
    return data


def resolve(name: str, args: argparse.Namespace, file_cfg: dict, default=None):
    """flag > file > default; flags left unset are ``None``."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in file_cfg:
        return file_cfg[name]
    return default


def resolve_seed(args: argparse.Namespace, file_cfg: dict) -> int:
    env = os.environ.get(SEED_ENV)
    default = DEFAULT_SEED
    if env is not None and env.strip():
        try:
            default = int(env)
        except ValueError:
            raise _usage(f"{SEED_ENV}={env!r} is not an integer") from None
    return int(resolve("seed", args, file_cfg, default))


def _model_config(section: str, file_cfg: dict, **defaults):
    cls = MODEL_SECTIONS[section]
    values = dict(defaults)
    values.update(file_cfg.get(section, {}))
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise _usage(f"invalid {section} config: {exc}") from None


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed (default: ${SEED_ENV} or {DEFAULT_SEED})")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file; flags override its values")


def _echo(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- shared I/O helpers ----------------------------------------------------------


def _read_wav(path) -> tuple[np.ndarray, int]:
    try:
        return read_wav(path)
    except FileNotFoundError:
        raise CliError(f"input file {str(path)!r} does not exist", EXIT_IO) from None
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read WAV {str(path)!r}: {exc}", EXIT_IO) from None


def _write_wav(path, x, rate) -> None:
    try:
        write_wav(path, x, rate)
    except OSError as exc:
        raise CliError(f"cannot write {str(path)!r}: {exc.strerror}", EXIT_IO) from None


def _write_text(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {str(path)!r}: {exc.strerror}", EXIT_IO) from None


def _load_checkpoint(path) -> ckpt_io.Checkpoint:
    # read here so that file-system failures map to the I/O exit code
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CliError(f"checkpoint {str(path)!r} does not exist", EXIT_IO) from None
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {str(path)!r}: {exc.strerror}", EXIT_IO) from None
    try:
        return ckpt_io.from_bytes(blob)
    except CheckpointError as exc:
        raise CliError(f"checkpoint {str(path)!r} is invalid: {exc}", EXIT_CHECKPOINT) from None


def _load_bundle(path) -> pipeline.ModelBundle:
    try:
        return pipeline.bundle_from_checkpoint(_load_checkpoint(path))
    except CheckpointError as exc:
        raise CliError(f"checkpoint {str(path)!r} is invalid: {exc}", EXIT_CHECKPOINT) from None


def _enhancer(bundle: pipeline.ModelBundle, mode: str, ckpt_path) -> pipeline.Enhancer:
    try:
        return pipeline.Enhancer(bundle, mode)
    except CheckpointError as exc:
        raise CliError(f"checkpoint {str(ckpt_path)!r}: {exc}", EXIT_CHECKPOINT) from None


# -- enhance -----------------------------------------------------------------------


def _stream_file(enhancer: pipeline.Enhancer, x: np.ndarray, rate: int, chunk_ms: float) -> np.ndarray:
    """Resample the whole file to 48 kHz, stream it in fixed chunks, resample back."""
    chunk = int(round(chunk_ms * pipeline.INTERNAL_RATE / 1000.0))
    if chunk < 1:
        raise _usage(f"--chunk-ms {chunk_ms} is shorter than one sample")
    x48 = resample(x, rate, pipeline.INTERNAL_RATE)
    y48 = pipeline.enhance_streaming(enhancer, x48, [chunk] * (len(x48) // chunk))
    y = resample(y48, pipeline.INTERNAL_RATE, rate)
    if len(y) >= len(x):
        return y[: len(x)]
    return np.concatenate([y, np.zeros(len(x) - len(y))])


def cmd_enhance(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    mode = resolve("mode", args, file_cfg, "two_stage")
    if mode not in pipeline.MODES:
        raise _usage(f"mode must be one of {', '.join(pipeline.MODES)}, got {mode!r}")
    chunk_ms = resolve("chunk_ms", args, file_cfg)
    x, rate = _read_wav(args.input)
    bundle = _load_bundle(args.ckpt)
    enhancer = _enhancer(bundle, mode, args.ckpt)
    _echo(f"algorithmic latency: {algorithmic_latency_ms(bundle.stft):.1f} ms")
    t0 = time.perf_counter()
    try:
        if chunk_ms is not None:
            y = _stream_file(enhancer, x, rate, float(chunk_ms))
        else:
            y = pipeline.enhance_offline(x, rate, enhancer)
    except UnsupportedRateError as exc:
        raise _usage(f"input {args.input!r}: {exc}") from None
    except (ConfigMismatchError, ValueError) as exc:
        raise _usage(f"input {args.input!r}: {exc}") from None
    wall = time.perf_counter() - t0
    audio_s = len(x) / rate if len(x) else 0.0
    rtf = wall / audio_s if audio_s > 0 else 0.0
    path = "streaming" if chunk_ms is not None else "offline"
    _echo(f"rtf: {rtf:.3f} ({path}, mode {mode}, {audio_s:.2f} s audio)")
    _write_wav(args.output, y, rate)
    return EXIT_OK


# -- stream-bench --------------------------------------------------------------------


def cmd_stream_bench(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    seed = resolve_seed(args, file_cfg)
    mode = resolve("mode", args, file_cfg, "two_stage")
    if mode not in pipeline.MODES:
        raise _usage(f"mode must be one of {', '.join(pipeline.MODES)}, got {mode!r}")
    if args.ckpt is not None:
        bundle = _load_bundle(args.ckpt)
    else:
        bundle = pipeline.ModelBundle.fresh(
            stage1_cfg=_model_config("stage1", file_cfg, seed=seed),
            generator_cfg=_model_config("generator", file_cfg, seed=seed + 1))
        bundle.discriminator = None
    enhancer = _enhancer(bundle, mode, args.ckpt)
    chunk_ms = resolve("chunk_ms", args, file_cfg, 10.0)
    chunk = max(1, int(round(float(chunk_ms) * pipeline.INTERNAL_RATE / 1000.0)))
    _echo(f"seed: {seed}")
    _echo(f"algorithmic latency: {algorithmic_latency_ms(bundle.stft):.1f} ms")
    try:
        report = pipeline.measure_rtf(enhancer, args.duration, seed, chunk)
    except ValueError as exc:
        raise _usage(str(exc)) from None
    report.update(seed=seed, chunk_samples=chunk)
    _echo(f"rtf: {report['rtf']:.3f}")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# -- train ---------------------------------------------------------------------------


def train_config_from(args: argparse.Namespace, file_cfg: dict, seed: int) -> TrainConfig:
    values = {k: file_cfg[k] for k in TRAIN_KEYS if k in file_cfg}
    for k in TRAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    values["seed"] = seed
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise _usage(f"invalid training config: {exc}") from None


def cmd_train(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    if args.stage == 2 and args.stage1_ckpt is None:
        raise _usage("stage 2 training requires --stage1-ckpt (a checkpoint from a stage-1 run)")
    seed = resolve_seed(args, file_cfg)
    cfg = train_config_from(args, file_cfg, seed)
    log_path = args.log or f"{args.out}.log.jsonl"
    _echo(f"seed: {seed}")
    try:
        dataset = load_dataset(args.data)
    except FileNotFoundError as exc:
        raise CliError(f"data manifest {args.data!r} or a file it lists is missing: {exc.filename}", EXIT_IO) from None
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load data manifest {args.data!r}: {exc}", EXIT_IO) from None
    resume = _load_checkpoint(args.resume) if args.resume else None
    try:
        if args.stage == 1:
            result = train_stage1(dataset, cfg, stage1_cfg=_model_config("stage1", file_cfg, seed=seed),
                                  resume=resume, log_path=log_path, ckpt_path=args.out)
        else:
            stage1_ckpt = _load_checkpoint(args.stage1_ckpt)
            result = train_stage2(
                dataset, stage1_ckpt, cfg,
                generator_cfg=_model_config("generator", file_cfg, seed=seed + 1),
                discriminator_cfg=_model_config("discriminator", file_cfg, seed=seed + 2),
                resume=resume, max_steps=resolve("max_steps", args, file_cfg),
                micro_batch=int(resolve("micro_batch", args, file_cfg, 2)),
                log_path=log_path, ckpt_path=args.out)
    except CheckpointError as exc:
        raise CliError(f"checkpoint error: {exc}", EXIT_CHECKPOINT) from None
    except TrainingError as exc:
        raise CliError(f"training failed: {exc}", EXIT_RUNTIME) from None
    except OSError as exc:
        raise CliError(f"I/O error while training: {exc}", EXIT_IO) from None
    _echo(json.dumps(result.summary, sort_keys=True))
    _echo(f"checkpoint: {args.out}")
    _echo(f"log: {log_path}")
    return EXIT_OK


# -- synth-data ----------------------------------------------------------------------


def cmd_synth_data(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    seed = resolve_seed(args, file_cfg)
    n_items = int(resolve("n_items", args, file_cfg, 50))
    duration = float(resolve("duration_s", args, file_cfg, 0.5))
    jobs = int(resolve("jobs", args, file_cfg, 1))
    if n_items < 1 or duration <= 0 or jobs < 1:
        raise _usage("--n-items, --duration-s and --jobs must be positive")
    _echo(f"seed: {seed}")
    ds = synth_dataset(n_items, seed=seed, duration_s=duration, jobs=jobs)
    try:
        path = save_dataset(ds, args.out)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out!r}: {exc.strerror}", EXIT_IO) from None
    _echo(f"manifest: {path}")
    return EXIT_OK


# -- eval / rank -----------------------------------------------------------------------


EVAL_HEADER = ["ref", "est", "lsd_db", "sdr_db", "si_sdr_db"]
EVAL_METRICS = (("lsd_db", "lower_better"), ("sdr_db", "higher_better"), ("si_sdr_db", "higher_better"))


def parse_eval_manifest(path: str) -> list[dict]:
    """CSV with columns ``ref,est`` and an optional ``model``; paths are relative to the manifest."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read manifest {path!r}: {exc.strerror}", EXIT_IO) from None
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise _usage(f"{path}: line 1: empty manifest")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["ref", "est"] or header[2:] not in ([], ["model"]):
        raise _usage(f"{path}: line 1: header must be ref,est or ref,est,model")
    base = Path(path).parent
    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise _usage(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        cells = dict(zip(header, (c.strip() for c in row)))
        if not cells["ref"] or not cells["est"]:
            raise _usage(f"{path}: line {lineno}: empty file path")
        pairs.append({"line": lineno, "ref": cells["ref"], "est": cells["est"],
                      "model": cells.get("model") or "model",
                      "ref_path": base / cells["ref"], "est_path": base / cells["est"]})
    if not pairs:
        raise _usage(f"{path}: no (ref, est) pairs listed")
    return pairs


def _eval_pair(pair: dict) -> dict:
    ref, r_rate = _read_wav(pair["ref_path"])
    est, e_rate = _read_wav(pair["est_path"])
    if r_rate != e_rate:
        raise _usage(f"line {pair['line']}: {pair['ref']} is {r_rate} Hz but {pair['est']} is {e_rate} Hz")
    if len(ref) != len(est):
        raise _usage(f"line {pair['line']}: {pair['ref']} has {len(ref)} samples, {pair['est']} has {len(est)}")
    try:
        return {"lsd_db": lsd(ref, est), "sdr_db": sdr(ref, est), "si_sdr_db": si_sdr(ref, est)}
    except ValueError as exc:
        raise _usage(f"line {pair['line']}: {exc}") from None


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = load_config_file(args.config)
    jobs = int(resolve("jobs", args, file_cfg, 1))
    if jobs < 1:
        raise _usage("--jobs must be >= 1")
    pairs = parse_eval_manifest(args.manifest)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_pair, pairs))
    else:
        results = [_eval_pair(p) for p in pairs]
    rows = [[p["ref"], p["est"]] + [repr(r[k]) for k, _ in EVAL_METRICS] for p, r in zip(pairs, results)]
    _write_text(args.out, _csv_text([EVAL_HEADER] + rows))
    if args.table_out:
        per_model: dict[str, list[dict]] = {}
        for p, r in zip(pairs, results):
            per_model.setdefault(p["model"], []).append(r)
        table = [CSV_HEADER]
        for model, rs in per_model.items():
            for metric, direction in EVAL_METRICS:
                mean = float(np.mean([r[metric] for r in rs]))
                table.append([model, metric, "intrusive", direction, repr(mean)])
        _write_text(args.table_out, _csv_text(table))
    return EXIT_OK


def _csv_text(rows) -> str:
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_rank(args: argparse.Namespace) -> int:
    try:
        table = read_metric_table(args.table)
    except OSError as exc:
        raise CliError(f"cannot read table {args.table!r}: {exc.strerror}", EXIT_IO) from None
    except MetricTableError as exc:
        raise _usage(f"{args.table}: {exc}") from None
    try:
        result = rank_models(table)
    except MetricTableError as exc:
        raise _usage(f"{args.table}: {exc}") from None
    _write_text(args.out, result.to_csv())
    if args.pretty:
        _echo(result.pretty())
    return EXIT_OK


# -- inspect-ckpt ----------------------------------------------------------------------


def checkpoint_report(ckpt: ckpt_io.Checkpoint) -> ParamReport:
    """Count parameter elements per component prefix; optimizer state is excluded."""
    return ParamReport(stage1=count_params(ckpt.subset("stage1")),
                       generator=count_params(ckpt.subset("generator")),
                       discriminator=count_params(ckpt.subset("discriminator")))


def cmd_inspect_ckpt(args: argparse.Namespace) -> int:
    if (args.ckpt is None) == (args.preset is None):
        raise _usage("give either a checkpoint path or --preset paper")
    if args.preset is not None:
        report = paper_report()
        header = {"preset": args.preset}
    else:
        ckpt = _load_checkpoint(args.ckpt)
        report = checkpoint_report(ckpt)
        header = {"path": args.ckpt, "meta": ckpt.header.get("meta", {}),
                  "components": sorted(ckpt.header.get("configs", {}))}
        stft_cfg = StftConfig(**ckpt.header["stft"]) if "stft" in ckpt.header else StftConfig()
        header["algorithmic_latency_ms"] = algorithmic_latency_ms(stft_cfg)
    if args.json:
        print(json.dumps({"source": header, "params": report.as_dict()}, sort_keys=True))
    else:
        for k, v in header.items():
            print(f"# {k}: {json.dumps(v, sort_keys=True)}")
        print("\n".join(report.lines()))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regen-stream", description="Streaming two-stage speech enhancement.",
        epilog="exit codes: 0 ok, 1 runtime failure, 2 bad arguments/input table, 3 I/O, 4 checkpoint")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt", required=True, help="checkpoint holding the models")
    p.add_argument("--mode", choices=pipeline.MODES, default=None)
    p.add_argument("--chunk-ms", dest="chunk_ms", type=float, default=None,
                   help="use the streaming path with chunks of this many milliseconds")
    _add_config(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("stream-bench", help="measure the streaming real-time factor")
    p.add_argument("--ckpt", default=None, help="checkpoint (default: freshly initialized toy models)")
    p.add_argument("--mode", choices=pipeline.MODES, default=None)
    p.add_argument("--duration", type=float, default=10.0, help="seconds of synthetic audio")
    p.add_argument("--chunk-ms", dest="chunk_ms", type=float, default=None)
    _add_seed(p)
    _add_config(p)
    p.set_defaults(func=cmd_stream_bench)

    p = sub.add_parser("train", help="train stage 1 or stage 2")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--stage1-ckpt", dest="stage1_ckpt", default=None)
    p.add_argument("--resume", default=None, help="training checkpoint to resume from")
    p.add_argument("--log", default=None, help="JSON-lines log (default: OUT.log.jsonl)")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--micro-batch", dest="micro_batch", type=int, default=None)
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=None)
    _add_seed(p)
    _add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth-data", help="write a synthetic degraded/clean dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-items", dest="n_items", type=int, default=None)
    p.add_argument("--duration-s", dest="duration_s", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None)
    _add_seed(p)
    _add_config(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("eval", help="LSD/SDR/SI-SDR for (ref, est) pairs listed in a CSV manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="per-pair CSV (default: stdout)")
    p.add_argument("--table-out", dest="table_out", default=None,
                   help="also write per-model means as a long-form metric table")
    p.add_argument("--jobs", type=int, default=None)
    _add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="rank models from a long-form metric table")
    p.add_argument("table")
    p.add_argument("--out", default=None, help="ranking CSV (default: stdout)")
    p.add_argument("--pretty", action="store_true", help="also print a table to stderr")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("inspect-ckpt", help="print the parameter-count report")
    p.add_argument("ckpt", nargs="?", default=None)
    p.add_argument("--preset", choices=("paper",), default=None,
                   help="report the full-size configuration instead of a file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect_ckpt)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _echo(f"error: {exc}")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
