"""Command-line entry point: gen | train | score | pged | eval | bench.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .autograd import PRECISIONS

log = logging.getLogger("multirm")


class ConfigError(Exception):
    """Bad user input: exit code 2."""


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return data


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _manifest(out: Path, command: str, config: dict, seed, inputs, outputs, t0: float) -> None:
    from .checkpoint import file_sha256

    _write_json(out / "manifest.json", {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {p.name: file_sha256(p) for p in outputs},
        "seconds": round(time.time() - t0, 3),
    })


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> None:
    from .packing import write_samples
    from .pged import write_judgments
    from .synth import GeneratorSpec, generate_judgments, generate_ranked

    t0 = time.time()
    raw = _load_json(args.config) if args.config else {}
    judg_cfg = raw.pop("judgments", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = GeneratorSpec.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid generator spec: {e}") from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, ev = generate_ranked(spec, "train"), generate_ranked(spec, "eval")
    outputs = [out / "train.jsonl", out / "eval.jsonl"]
    write_samples(train, outputs[0])
    write_samples(ev, outputs[1])
    if judg_cfg is not None:
        try:
            judgments = generate_judgments(ev, int(judg_cfg.get("n_annotators", 5)),
                                           float(judg_cfg.get("flip_prob", 0.1)),
                                           float(judg_cfg.get("tie_prob", 0.0)), spec.seed)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid judgments section: {e}") from e
        outputs.append(out / "judgments.jsonl")
        write_judgments(judgments, outputs[-1])
    print(f"wrote {len(train)} train and {len(ev)} eval samples to {out}")
    config = spec.to_dict() | ({"judgments": judg_cfg} if judg_cfg is not None else {})
    _manifest(out, "gen", config, spec.seed, [args.config] if args.config else [], outputs, t0)


def _model_from_config(raw: dict, seed: int, precision: str):
    from .backbone import BackboneConfig
    from .scoring import init_reward_model

    model = raw.pop("model", {})
    head = raw.pop("head", {})
    try:
        cfg = BackboneConfig.from_dict(model)
        return init_reward_model(cfg, seed, head.get("hidden", 32), head.get("activation", "silu"),
                                 head.get("representation", "last"), dtype=PRECISIONS[precision]), model, head
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid model config: {e}") from e


def cmd_train(args) -> None:
    from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
    from .packing import read_samples
    from .training import TrainConfig, train

    t0 = time.time()
    raw = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.precision is not None:
        raw["precision"] = args.precision
    if args.objective is not None:
        raw["objective"] = args.objective
    model_raw = {"model": raw.pop("model", {}), "head": raw.pop("head", {})}
    try:
        tc = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid train config: {e}") from e

    data = _need(args.data)
    train_path = data / "train.jsonl" if data.is_dir() else data
    eval_path = Path(args.eval) if args.eval else (data / "eval.jsonl" if data.is_dir() else None)
    train_set = read_samples(_need(train_path))
    eval_set = read_samples(eval_path) if eval_path is not None and eval_path.exists() else None
    inputs = [train_path] + ([eval_path] if eval_set is not None else [])

    if args.init:
        weights = load_checkpoint(_need(args.init))
        inputs.append(Path(args.init))
    else:
        weights, _, _ = _model_from_config(dict(model_raw), tc.seed, "ref64")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(weights, out / "init.ckpt")
    print(f"objective: {tc.objective}")

    def progress(step, total, loss):
        if step % 32 == 0 or step == total:
            log.info("step %d/%d loss %s", step, total, None if loss is None else round(loss, 4))

    final, tlog = train(train_set, eval_set, weights, tc, progress)
    if tlog.skipped:
        print(f"warning: skipped {tlog.skipped} overlength samples", file=sys.stderr)
    save_checkpoint(final, out / "model.ckpt")
    tlog.final_weights = file_sha256(out / "model.ckpt")
    tlog.write(out)
    for rec in tlog.epochs:
        print(json.dumps(rec, sort_keys=True))
    config = tc.to_dict() | {"model": weights.config.to_dict(), "head": weights.head.meta()}
    _manifest(out, "train", config, tc.seed, inputs,
              [out / n for n in ("init.ckpt", "model.ckpt", "train_log.jsonl", "train_summary.json")], t0)


def cmd_score(args) -> None:
    from .checkpoint import load_checkpoint
    from .packing import PreferenceSample, read_samples
    from .scoring import representation_dim, score
    from .tokenizer import encode

    t0 = time.time()
    weights = load_checkpoint(_need(args.checkpoint))
    if args.precision == "fast32":
        weights = weights.astype(PRECISIONS["fast32"])
    head = weights.head
    if head is None:
        raise ConfigError("checkpoint has no value head")
    if args.representation is not None:
        head.representation = args.representation
    if head.input_dim != representation_dim(weights.config.d, head.representation):
        raise ConfigError(f"value head input dim {head.input_dim} does not fit representation "
                          f"{head.representation!r} at d={weights.config.d}")
    inputs = [Path(args.checkpoint)]
    if args.data:
        samples = read_samples(_need(args.data))
        inputs.append(Path(args.data))
    elif args.text_context and args.text_response:
        ctx = encode(_need(args.text_context).read_text())
        resp = [encode(_need(p).read_text()) for p in args.text_response]
        samples = [PreferenceSample("text", ctx, resp, best=0)]
        inputs += [Path(args.text_context)] + [Path(p) for p in args.text_response]
    else:
        raise ConfigError("score needs --data or --text-context with --text-response")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        try:
            records.append(score(weights, s, args.mode).to_json())
        except ValueError as e:
            raise ConfigError(str(e)) from e
    _write_jsonl(out / "scores.jsonl", records)
    print(f"scored {len(records)} samples ({args.mode})")
    _manifest(out, "score", {"mode": args.mode, "precision": args.precision,
                             "representation": head.representation}, None, inputs, [out / "scores.jsonl"], t0)


def cmd_pged(args) -> None:
    from .pged import read_judgments, run_pged

    t0 = time.time()
    path = _need(args.judgments)
    results, skipped = run_pged(read_judgments(path))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "pged.jsonl", results)
    removed = sum(r["removed_edges"] for r in results)
    print(f"{len(results)} questions, {removed} edges removed, {skipped} malformed records skipped")
    _manifest(out, "pged", {"skipped": skipped}, None, [path], [out / "pged.jsonl"], t0)


def cmd_eval(args) -> None:
    from .metrics import evaluate
    from .packing import read_samples

    t0 = time.time()
    scores_path, truth_path = _need(args.scores), _need(args.truth)
    with open(scores_path) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    try:
        result = evaluate(recs, read_samples(truth_path))
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e
    out = Path(args.out)
    result.write(out)
    print(json.dumps(result.summary(), sort_keys=True))
    _manifest(out, "eval", {}, None, [scores_path, truth_path], [out / "eval.json", out / "eval_samples.jsonl"], t0)


def _parse_range(text: str) -> list[int]:
    try:
        if "-" in text:
            lo, hi = text.split("-")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"bad N range {text!r}") from e


def cmd_bench(args) -> None:
    from .backbone import BackboneConfig
    from .cost import cost_single_vs_multi, scaling_curve, timed_bench, write_curve_csv, write_report
    from .scoring import init_reward_model

    t0 = time.time()
    raw = _load_json(args.config) if args.config else {}
    try:
        cfg = BackboneConfig.from_dict(raw.get("model", raw))
        report = cost_single_vs_multi(args.P, [args.R] * args.N, cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "cost_report.json")
    rows = scaling_curve(args.P, args.R, _parse_range(args.n_range), cfg)
    write_curve_csv(rows, out / "scaling.csv", "tokens")
    write_curve_csv(rows, out / "scaling_flops.csv", "flops")
    outputs = [out / "cost_report.json", out / "scaling.csv", out / "scaling_flops.csv"]
    print(f"P={args.P} R={args.R} N={args.N}: token speedup {report.speedup_tokens:.3f}x, "
          f"FLOPs speedup {report.speedup_flops:.3f}x")
    if args.timed:
        seed = 0 if args.seed is None else args.seed
        weights = init_reward_model(cfg, seed)
        timing = timed_bench(weights, args.P, args.R, args.N, args.repeats, seed)
        _write_json(out / "timing.json", timing)
        outputs.append(out / "timing.json")
        print(f"measured speedup {timing['measured_speedup']:.3f}x over {args.repeats} repeats")
    _manifest(out, "bench", {"model": cfg.to_dict(), "P": args.P, "R": args.R, "N": args.N,
                             "n_range": args.n_range, "timed": args.timed}, args.seed,
              [args.config] if args.config else [], outputs, t0)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed for every random stream")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--precision", choices=sorted(PRECISIONS), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="multirm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate synthetic corpora")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train a reward model")
    t.add_argument("--data", required=True, help="directory with train.jsonl/eval.jsonl, or a JSONL file")
    t.add_argument("--eval", default=None, help="held-out JSONL (default: <data>/eval.jsonl)")
    t.add_argument("--init", default=None, help="start from this checkpoint")
    t.add_argument("--objective", choices=["ce-multi", "bt-single", "pl-multi"], default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score samples with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--mode", choices=["multi", "single"], default="multi")
    s.add_argument("--representation", default=None,
                   choices=["last", "first-last-concat", "first-plus-last", "first-minus-last", "mean"])
    s.add_argument("--text-context", default=None, help="demo: raw text prompt (byte tokenizer)")
    s.add_argument("--text-response", action="append", default=None, help="demo: raw text response (repeatable)")
    s.set_defaults(func=cmd_score)

    pg = sub.add_parser("pged", parents=[common], help="denoise pairwise judgments into rankings")
    pg.add_argument("--judgments", required=True)
    pg.set_defaults(func=cmd_pged)

    e = sub.add_parser("eval", parents=[common], help="evaluate scores against ground truth")
    e.add_argument("--scores", required=True)
    e.add_argument("--truth", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="analytical cost model and optional timing")
    b.add_argument("--P", type=int, default=1000, help="context length")
    b.add_argument("--R", type=int, default=10, help="response length")
    b.add_argument("--N", type=int, default=4, help="responses for the headline report")
    b.add_argument("--n-range", default="2-16", help="N values for the scaling curve, e.g. 2-16 or 2,4,8")
    b.add_argument("--timed", action="store_true", help="also time the toy model on this host")
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - surfaced as exit code 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
