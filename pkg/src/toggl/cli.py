"""Command line entry point: ``toggl <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Failures also print a one-line JSON error record on stderr.
Every subcommand writes only inside ``--out-dir`` (default: $TOGGL_OUT_DIR,
else ``./toggl_out``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import (
    deserialize,
    enumerate_permutation_targets,
    format_stream,
    order_speakers,
    parse_stream,
    read_jsonl,
    serialize,
    transcript_from_record,
    write_jsonl,
)
from .ctc import ctc_feasible, ctc_forward_logprob, duplicate_frames, lattice_tsv, min_frames
from .errors import ConfigError, DataError, TogglError
from .mixing import load_source_manifest, mixture_manifest_record, synthesize_dataset, write_wav
from .report import write_report
from .scoring import DEFAULT_BUCKET_EDGES, bucket_report, oracle_k_wer, pit_wer, pooled

OUT_DIR_ENV = "TOGGL_OUT_DIR"
CONFIG_SECTIONS = ("seed", "task", "train", "eval", "ablate")


# -- config -------------------------------------------------------------------


def _check_keys(section: str, data: dict, allowed: Sequence[str]) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {', '.join(unknown)}")


def load_config(path: str | None) -> dict:
    """Read the JSON config file; unknown sections or keys are rejected."""
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    _check_keys("top-level", data, CONFIG_SECTIONS)
    return data


def build_task(cfg: dict):
    from .toy.task import SyntheticTask

    section = cfg.get("task", {})
    _check_keys("task", section, [f.name for f in fields(SyntheticTask)])
    return SyntheticTask(**section)


def build_train_config(cfg: dict, args: argparse.Namespace):
    from .toy.train import TrainConfig

    data = dict(cfg.get("train", {}))
    _check_keys("train", data, [f.name for f in fields(TrainConfig)])
    if "seed" in cfg:
        data["seed"] = cfg["seed"]
    overrides = {
        "steps": getattr(args, "steps", None),
        "seed": getattr(args, "seed", None),
        "ctc_weight": getattr(args, "ctc_weight", None),
        "duplication_factor": getattr(args, "duplication_factor", None),
        "learning_rate": getattr(args, "lr", None),
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "no_pit", False):
        data["pit_enabled"] = False
    if getattr(args, "mix_weights", None):
        data["mix_weights"] = _floats(args.mix_weights)
    return TrainConfig(**data)


EVAL_KEYS = ("count", "seed", "conditions", "max_len")
ABLATE_KEYS = ("knobs", "eval_count", "eval_seed", "conditions")


def _section(cfg: dict, name: str, allowed: Sequence[str]) -> dict:
    data = dict(cfg.get(name, {}))
    _check_keys(name, data, allowed)
    return data


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "toggl_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


# -- subcommands --------------------------------------------------------------


def cmd_mix(args) -> int:
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    out = _out_dir(args)
    utts = load_source_manifest(manifest)
    items = synthesize_dataset(utts, args.n_mix, args.count, args.seed)
    wav_dir = out / "wavs"
    wav_dir.mkdir(exist_ok=True)
    records, clipped = [], 0
    for it in items:
        rel = f"wavs/{it.mix_id}.wav"
        clipped += write_wav(out / rel, it.record.mixture)
        records.append(mixture_manifest_record(it, rel))
    write_jsonl(out / "mixtures.jsonl", records)
    write_jsonl(out / "targets.jsonl", ({"id": r["id"], "toggl": r["toggl_target"]} for r in records))
    _emit({"command": "mix", "items": len(records), "clipped_samples": clipped, "out_dir": str(out)})
    return 0


def cmd_serialize(args) -> int:
    """Input lines: ``{id, transcripts: [{speaker, tokens: [{text, start}]}]}``."""
    src = _require(args.input, "input")
    out = _out_dir(args)
    records = []
    for rec in read_jsonl(src):
        if "transcripts" not in rec:
            raise DataError(f"record {rec.get('id', '?')!r} has no transcripts")
        trs = [transcript_from_record(t) for t in rec["transcripts"]]
        order = order_speakers(trs)
        row = {"id": rec.get("id"), "toggl": format_stream(serialize(trs, order)), "order": list(order)}
        if args.all_orders:
            targets = enumerate_permutation_targets(trs)
            row["permutations"] = [{"order": list(t.order), "toggl": format_stream(t.stream)} for t in targets]
        records.append(row)
    write_jsonl(out / "serialized.jsonl", records)
    _emit({"command": "serialize", "items": len(records)})
    return 0


def cmd_deserialize(args) -> int:
    src = _require(args.input, "input")
    out = _out_dir(args)
    records = []
    for rec in read_jsonl(src):
        stream = parse_stream(rec.get("toggl", rec.get("toggl_target", "")))
        streams = deserialize(stream, args.mode)
        records.append({"id": rec.get("id"), "streams": {str(k): v for k, v in streams.items()}})
    write_jsonl(out / "deserialized.jsonl", records)
    _emit({"command": "deserialize", "items": len(records), "mode": args.mode})
    return 0


def _streams_of(rec: dict, mode: str) -> dict[int, list[str]]:
    if "streams" in rec:
        return {int(k): list(v) for k, v in rec["streams"].items()}
    text = rec.get("toggl", rec.get("toggl_target"))
    if text is None:
        raise DataError(f"record {rec.get('id', '?')!r} has neither streams nor a toggl field")
    return deserialize(parse_stream(text), mode)


def _by_id(path: Path) -> dict[str, dict]:
    out = {}
    for rec in read_jsonl(path):
        if "id" not in rec:
            raise DataError(f"{path}: record without id")
        out[str(rec["id"])] = rec
    return out


def cmd_score(args) -> int:
    refs = _by_id(_require(args.refs, "refs"))
    hyps = _by_id(_require(args.hyps, "hyps"))
    missing_h = sorted(set(refs) - set(hyps))
    missing_r = sorted(set(hyps) - set(refs))
    if missing_h or missing_r:
        parts = []
        if missing_h:
            parts.append(f"missing from hyps: {', '.join(missing_h)}")
        if missing_r:
            parts.append(f"missing from refs: {', '.join(missing_r)}")
        raise DataError("id mismatch between manifests; " + "; ".join(parts))
    ref_mode = "strict"
    hyp_mode = "strict" if args.strict_decode else "lenient"
    out = _out_dir(args)
    per_item, bucketed, utt_rows = [], [], []
    for uid in sorted(refs):
        r = _streams_of(refs[uid], ref_mode)
        h = _streams_of(hyps[uid], hyp_mode)
        rep = oracle_k_wer(r, h, args.oracle_k) if args.oracle_k else pit_wer(r, h)
        per_item.append(rep)
        utt_rows.append({"id": uid, **rep.counts(), "wer": rep.wer, "oracle": rep.oracle})
        if args.buckets is not None:
            if "overlap_fraction" not in refs[uid]:
                raise DataError(f"--buckets needs overlap_fraction in refs (missing for {uid})")
            bucketed.append((rep, float(refs[uid]["overlap_fraction"])))
    total = pooled(per_item)
    label = f"oracle k={args.oracle_k}*" if args.oracle_k else "pit"
    corpus = {"scoring": label, "utterances": len(per_item), **total.counts(), "wer": total.wer, "oracle": total.oracle}
    write_report(out, "score", [corpus])
    write_report(out, "score_utterances", utt_rows)
    summary = {"command": "score", "wer": total.wer, "oracle": total.oracle, "utterances": len(per_item)}
    if args.buckets is not None:
        edges = _floats(args.buckets) if args.buckets else DEFAULT_BUCKET_EDGES
        rows = bucket_report(bucketed, edges)
        table = [{"bucket": r.label, "utterances": r.utterances, "wer": r.report.wer if r.report.ref_words else None,
                  **r.report.counts()} for r in rows]
        write_report(out, "buckets", table)
        summary["buckets"] = {row["bucket"]: row["wer"] for row in table}
    _emit(summary)
    return 0


def cmd_train(args) -> int:
    from .toy.model import save_checkpoint
    from .toy.train import train

    cfg = load_config(args.config)
    task = build_task(cfg)
    tc = build_train_config(cfg, args)
    out = _out_dir(args)
    model, log = train(tc, task, log_path=out / "train_log.jsonl")
    save_checkpoint(out / "model.ckpt", model, {"task": task.to_dict(), "train": tc.to_dict()})
    _emit({
        "command": "train",
        "steps": tc.steps,
        "final_loss": log[-1]["loss"] if log else None,
        "checkpoint": str(out / "model.ckpt"),
    })
    return 0


def cmd_eval(args) -> int:
    from .toy.evaluate import evaluate, table_rows
    from .toy.model import load_checkpoint
    from .toy.task import SyntheticTask

    model, header = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    cfg = load_config(args.config)
    ev = _section(cfg, "eval", EVAL_KEYS)
    task_cfg = cfg.get("task", header["config"].get("task", {}))
    _check_keys("task", task_cfg, [f.name for f in fields(SyntheticTask)])
    task = SyntheticTask(**task_cfg)
    conditions = _ints(args.conditions) if args.conditions else tuple(ev.get("conditions", (1, 2, 3)))
    count = args.count or ev.get("count", 200)
    seed = args.seed if args.seed is not None else ev.get("seed", 1000)
    results = evaluate(model, task, conditions, count, seed, ev.get("max_len", 40))
    out = _out_dir(args)
    write_report(out, "eval_table", table_rows(results), {"checkpoint_config_hash": header["config_hash"]})
    write_report(out, "eval_conditions", [r.to_dict() for r in results])
    _emit({"command": "eval", **{f"{r.n_mix}-mix": r.report.wer for r in results},
           **{f"{r.n_mix}-mix_baseline": r.baseline.wer for r in results if r.baseline is not None}})
    return 0


def cmd_ablate(args) -> int:
    from .toy.ablate import DEFAULT_KNOBS, ablation_configs, run_ablation

    cfg = load_config(args.config)
    ab = _section(cfg, "ablate", ABLATE_KEYS)
    knobs = tuple(args.knobs.split(",")) if args.knobs else tuple(ab.get("knobs", DEFAULT_KNOBS))
    task = build_task(cfg)
    base = build_train_config(cfg, args)
    ablation_configs(base, knobs)  # validates every row before any training
    conditions = _ints(args.conditions) if args.conditions else tuple(ab.get("conditions", (1, 2, 3)))
    out = _out_dir(args)
    rows = run_ablation(
        base,
        task,
        knobs,
        conditions,
        args.eval_count or ab.get("eval_count", 200),
        ab.get("eval_seed", 1000),
        progress=lambda label: print(f"ablate: training row {label!r}", file=sys.stderr),
    )
    write_report(out, "ablation", [r.to_dict() for r in rows],
                 {"rows": [{"system": r.label, "config": r.config.to_dict()} for r in rows]})
    _emit({"command": "ablate", "rows": [r.to_dict() for r in rows]})
    return 0


def cmd_ctc_check(args) -> int:
    """Input: ``{"probs": T x V matrix, "target": [label ids]}`` (blank = 0)."""
    src = _require(args.input, "input")
    try:
        data = json.loads(src.read_text())
        probs = np.asarray(data["probs"], dtype=np.float64)
        target = [int(x) for x in data["target"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{src}: expected {{probs, target}}: {exc}") from exc
    if probs.ndim != 2:
        raise DataError("probs must be a T x V matrix")
    dup = duplicate_frames(probs, args.duplication_factor)
    row = {
        "frames": int(probs.shape[0]),
        "duplication_factor": args.duplication_factor,
        "ctc_frames": int(dup.shape[0]),
        "min_frames": min_frames(target),
        "feasible_before": ctc_feasible(probs.shape[0], target),
        "feasible_after": ctc_feasible(dup.shape[0], target),
        "logprob": None,
    }
    if row["feasible_after"]:
        row["logprob"] = ctc_forward_logprob(dup, target)
        out = _out_dir(args)
        (out / "lattice.tsv").write_text(lattice_tsv(dup, target))
    else:
        out = _out_dir(args)
    write_report(out, "ctc_check", [row])
    _emit({"command": "ctc-check", **row})
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toggl", description="Serialized multi-speaker transcription toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default: ${OUT_DIR_ENV} or ./toggl_out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", parents=[common], help="synthesize overlapped mixtures from a source manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-mix", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("serialize", parents=[common], help="timed transcripts -> token streams")
    p.add_argument("--input", required=True)
    p.add_argument("--all-orders", action="store_true", help="also emit every speaker-order target")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("deserialize", parents=[common], help="token streams -> per-speaker token lists")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("strict", "lenient"), default="strict")
    p.set_defaults(func=cmd_deserialize)

    p = sub.add_parser("score", parents=[common], help="multi-speaker WER")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--oracle-k", type=int, default=None)
    p.add_argument("--buckets", nargs="?", const="", default=None,
                   help="bucket by overlap fraction; optional comma-separated edges")
    p.add_argument("--strict-decode", action="store_true", help="reject hypothesis streams that underflow")
    p.set_defaults(func=cmd_score)

    def train_flags(p):
        p.add_argument("--config")
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--ctc-weight", type=float)
        p.add_argument("--duplication-factor", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--no-pit", action="store_true")
        p.add_argument("--mix-weights", help="comma-separated weights for 1-mix, 2-mix, ...")

    p = sub.add_parser("train", parents=[common], help="train the toy model")
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a toy checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--conditions", help="comma-separated speaker counts, default 1,2,3")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run the cumulative ablation grid")
    train_flags(p)
    p.add_argument("--knobs", help="comma-separated subset/order of: pit,ctc_enhancement,ctc,three_mix")
    p.add_argument("--eval-count", type=int)
    p.add_argument("--conditions")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ctc-check", parents=[common], help="CTC feasibility and forward score for a posterior grid")
    p.add_argument("--input", required=True)
    p.add_argument("--duplication-factor", type=int, default=1)
    p.set_defaults(func=cmd_ctc_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TogglError as exc:
        code = exc.exit_code
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    except OSError as exc:
        code = DataError.exit_code
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
