"""Command line entry point: simulate, gen-dataset, teach, infer, eval, report, pipeline.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import Tech, derive_seed, theoretical_ber, transmit, transmit_mats
from .config import RunConfig, resolve_secret
from .dataset import (DatasetManifest, apply_split, build_questions, read_dataset, synthetic_counts,
                      synthetic_images, write_dataset)
from .degradation import DegradationScenario, inject, measure_quality
from .errors import AidrError, ConfigError, EndpointUnreachableError, ExtractionError, InvalidInputError
from .evaluation import (MetricReport, PredictionRecord, evaluate, read_predictions, report_table,
                         write_predictions)
from .fusion import (ChatAnswerBackend, GoldEchoBackend, ToyModelConfig, ToyStudent, UniformRandomBackend,
                     load_model_config, two_stage_infer)
from .images import load_image, save_png, scan_scenes
from .llm import HttpChatBackend, RetryPolicy
from .teacher import (attach_rationales, checkpoint_path_for, generate_pcot, load_record, mock_teacher,
                      save_record)

log = logging.getLogger("aidr")

ARTIFACT_VERSION = "1"
MOCK_CLOCK = "1970-01-01T00:00:00Z"


class UsageError(AidrError):
    """Bad invocation or missing inputs (exit code 2)."""


class StageError(AidrError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


_COMMAND_LINE = ["aidr"]


def provenance() -> dict:
    return {"format_version": ARTIFACT_VERSION, "command": shlex.join(_COMMAND_LINE), "aidr_version": __version__}


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, ensure_ascii=False) + "\n")


def write_jsonl(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    write_meta(path)


def write_meta(path) -> None:
    """JSON-lines artifacts get their provenance in a ``.meta.json`` sidecar."""
    path = Path(path)
    write_json(provenance(), path.with_name(path.name + ".meta.json"))


# -- stages ---------------------------------------------------------------------

def load_scenarios(path) -> list:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"scenario file not found: {path}") from exc
    if not isinstance(doc, list):
        raise ConfigError(f"{path}: scenario file must be a JSON array")
    return [DegradationScenario.from_dict(d) for d in doc]


def iter_scene_images(scenes_dir, limit: int | None = None):
    root = Path(scenes_dir)
    if not root.is_dir():
        raise UsageError(f"scene directory not found: {scenes_dir}")
    scenes = scan_scenes(root)
    if not scenes:
        raise UsageError(f"no images found under {scenes_dir}")
    n = 0
    for scene, paths in scenes.items():
        for p in paths:
            if limit is not None and n >= limit:
                return
            yield scene, f"{scene}-{p.stem}", load_image(p)
            n += 1


def run_simulate(cfg: RunConfig, seed: int, out, scenes_dir=None, synthetic: int | None = None,
                 scenarios_path=None, quality_out=None, figure=None) -> list:
    if scenes_dir:
        images = list(iter_scene_images(scenes_dir))
    elif synthetic:
        images = list(synthetic_images(synthetic_counts(synthetic), cfg["dataset"]["image_size"]))
    else:
        raise UsageError("simulate needs --scenes DIR or --synthetic N")
    scenarios = load_scenarios(scenarios_path) if scenarios_path else [None]
    nominal = cfg.profiles
    records, quality = [], []
    for scene, image_id, img in images:
        for sc in scenarios:
            profiles = inject(sc, nominal).profiles if sc is not None else nominal
            sid = sc.scenario_id if sc is not None else "nominal"
            for p in profiles:
                s = derive_seed(seed, sid, image_id, p.tech.value)
                o = transmit(img, p, p.nominal_snr_db, s, image_id)
                records.append(o.to_record(image_id, scenario_id=sid, n_bits=o.n_bits,
                                           throughput_bps=o.throughput_bps))
            if quality_out:
                outs, received = transmit_mats(img, profiles, derive_seed(seed, sid, image_id), nominal, image_id)
                q = measure_quality(img, received, {o.tech.value: o.ber for o in outs})
                quality.append({"image_id": image_id, "scenario_id": sid, **q.to_dict()})
    write_jsonl(records, out)
    if quality_out:
        write_jsonl(quality, quality_out)
    if figure:
        from .plotting import plot_ber_curve
        by_snr = {}
        for r in records:
            by_snr.setdefault(r["snr_db"], []).append(r["ber"])
        snrs = sorted(by_snr)
        if len(snrs) > 1:
            plot_ber_curve(snrs, [float(np.mean(by_snr[s])) for s in snrs], figure)
        else:
            log.warning("only one SNR value in the run; skipping BER figure")
    log.info("simulate: %d records -> %s", len(records), out)
    return records


def run_ber_curve(seed: int, snrs, symbols: int, out=None, figure=None) -> dict:
    from .channel import BitStream, awgn_apply, qfsk_demodulate, qfsk_modulate
    rng = np.random.default_rng(seed)
    bits = BitStream(rng.integers(0, 2, 2 * symbols, dtype=np.uint8))
    block = qfsk_modulate(bits)
    rows = []
    for i, snr in enumerate(snrs):
        rx = qfsk_demodulate(awgn_apply(block, snr, derive_seed(seed, "ber-curve", i)))
        ber = float(np.mean(rx.bits != bits.bits))
        rows.append({"snr_db": snr, "ber": ber, "theory": theoretical_ber(snr)})
    doc = {"provenance": provenance(), "symbols": symbols, "points": rows}
    if out:
        write_json(doc, out)
    if figure:
        from .plotting import plot_ber_curve
        plot_ber_curve([r["snr_db"] for r in rows], [r["ber"] for r in rows], figure)
    return doc


def run_gen_dataset(cfg: RunConfig, seed: int, out, scenes_dir=None, count=None, split=None,
                    write_images=None, context_style=None) -> DatasetManifest:
    dcfg = cfg["dataset"]
    scenes_dir = scenes_dir or dcfg["scenes_dir"]
    count = count if count is not None else dcfg["count"]
    split = split or dcfg["split"]
    write_images = dcfg["write_images"] if write_images is None else write_images
    out = Path(out)
    if scenes_dir:
        images = iter_scene_images(scenes_dir, count)
    else:
        images = synthetic_images(synthetic_counts(count), dcfg["image_size"])

    def ref(scene, image_id):
        return f"images/{scene}/{image_id}.png"

    def keep(q, received):
        if write_images:
            save_png(received, out.parent / q.image_ref)

    questions = build_questions(images, seed, cfg.profiles, image_ref=ref, on_received=keep,
                                context_style=context_style or dcfg["context_style"])
    manifest = apply_split(questions, split, seed)
    manifest = DatasetManifest(manifest.questions, seed, provenance={**provenance(), "split": split})
    write_dataset(manifest, out)
    log.info("gen-dataset: %d questions %s -> %s", len(questions), manifest.counts, out)
    return manifest


def run_teach(cfg: RunConfig, dataset_path, out, *, endpoint=None, model=None, mock=None, concurrency=None,
              batch_size=None, group_by=None, attach_out=None, retry: RetryPolicy | None = None):
    tcfg = cfg["teacher"]
    manifest = read_dataset(dataset_path)
    mock = tcfg["mock"] if mock is None else mock
    endpoint = endpoint or tcfg["endpoint"]
    model = model or tcfg["model"]
    retry = retry or RetryPolicy(max_retries=tcfg["max_retries"])
    if mock:
        backend, clock = mock_teacher(manifest), (lambda: MOCK_CLOCK)
    else:
        if not endpoint:
            raise UsageError("teach needs --endpoint URL (or --mock)")
        backend = HttpChatBackend(endpoint, resolve_secret(tcfg["api_key"]))
        from .teacher import _wall_clock as clock
    ckpt = checkpoint_path_for(out)
    record = generate_pcot(manifest, backend, model=model, batch_size=batch_size or tcfg["batch_size"],
                           concurrency_limit=concurrency or tcfg["concurrency"], checkpoint=ckpt,
                           group_by=group_by or tcfg["group_by"], retry=retry, clock=clock)
    save_record(record, out)
    ckpt.unlink(missing_ok=True)
    if attach_out:
        attached, warnings = attach_rationales(manifest, record)
        for w in warnings:
            log.warning(w)
        write_dataset(DatasetManifest(attached.questions, attached.seed, provenance=provenance()), attach_out)
    return record


def make_student(cfg: RunConfig, backend: str, model_config=None, seed: int = 0):
    scfg = dict(cfg["student"])
    if model_config:
        scfg.update(load_model_config(model_config))
    backend = backend or scfg["backend"]
    if backend in ("gold", "mock"):
        return GoldEchoBackend()
    if backend == "random":
        return UniformRandomBackend(seed)
    if backend == "toy":
        keys = ToyModelConfig.__dataclass_fields__
        return ToyStudent(ToyModelConfig(**{k: scfg[k] for k in keys if k in scfg}))
    if backend == "remote":
        if not scfg.get("endpoint"):
            raise UsageError("remote student backend needs an endpoint in the model config")
        return ChatAnswerBackend(HttpChatBackend(scfg["endpoint"], cfg.api_key), scfg["model"])
    raise UsageError(f"unknown backend {backend!r}")


def select_split(manifest: DatasetManifest, split: str) -> list:
    if split == "all":
        return list(manifest.questions)
    if split == "auto":
        return manifest.by_split("test") or list(manifest.questions)
    return manifest.by_split(split)


def run_infer(cfg: RunConfig, dataset_path, out, backend=None, model_config=None, split="test", seed=0) -> list:
    manifest = read_dataset(dataset_path)
    student = make_student(cfg, backend, model_config, seed)
    base = Path(dataset_path).parent
    preds = []
    for q in select_split(manifest, split):
        img_path = base / q.image_ref
        vision = load_image(img_path) if q.image_ref and img_path.is_file() else None
        try:
            res = two_stage_infer(q, vision, student, student)
            preds.append(PredictionRecord(q.id, res.answer, res.rationale))
        except ExtractionError as exc:
            log.warning("question %s: %s", q.id, exc)
            preds.append(PredictionRecord(q.id, None, "", exc.raw))
    write_predictions(preds, out)
    write_meta(out)
    return preds


def run_eval(predictions_path, gold_path, out, split="auto", label="") -> MetricReport:
    gold = read_dataset(gold_path)
    preds = read_predictions(predictions_path)
    report = evaluate(preds, select_split(gold, split), label=label)
    for issue in report.issues[:20]:
        log.warning(issue)
    write_json({**report.to_dict(), "provenance": provenance()}, out)
    md = Path(out).with_suffix(".md")
    md.write_text(report_table([report], [label or "predictions"]))
    return report


def run_report(inputs, fmt="markdown", labels=None, out=None, figure=None) -> str:
    reports = [MetricReport.from_dict(json.loads(Path(p).read_text())) for p in inputs]
    labels = labels or [r.label or Path(p).stem for r, p in zip(reports, inputs)]
    if len(labels) != len(reports):
        raise UsageError(f"{len(labels)} labels for {len(reports)} reports")
    table = report_table(reports, labels, fmt)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(table)
    if figure:
        from .plotting import plot_metrics
        plot_metrics(reports, labels, figure)
    return table


def run_pipeline(cfg: RunConfig, seed: int, out_dir, *, count=None, split=None, backend=None, mock=None,
                 endpoint=None, scenes_dir=None, eval_split=None, retry=None) -> MetricReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ecfg = cfg["evaluation"]
    paths = {
        "channel": out_dir / "channel.jsonl",
        "dataset": out_dir / "dataset.json",
        "pcot": out_dir / "pcot.json",
        "dataset_cot": out_dir / "dataset_cot.json",
        "predictions": out_dir / "predictions.jsonl",
        "metrics": out_dir / "metrics.json",
        "report": out_dir / "report.md",
        "figure": out_dir / "metrics.png",
    }
    n_images = count if count is not None else cfg["dataset"]["count"]
    stages = [
        ("simulate", lambda: run_simulate(cfg, seed, paths["channel"], scenes_dir,
                                          None if scenes_dir else n_images)),
        ("gen-dataset", lambda: run_gen_dataset(cfg, seed, paths["dataset"], scenes_dir, count, split)),
        ("teach", lambda: run_teach(cfg, paths["dataset"], paths["pcot"], endpoint=endpoint, mock=mock,
                                    attach_out=paths["dataset_cot"], retry=retry)),
        ("infer", lambda: run_infer(cfg, paths["dataset_cot"], paths["predictions"], backend,
                                    split=eval_split or ecfg["split"], seed=seed)),
        ("eval", lambda: run_eval(paths["predictions"], paths["dataset_cot"], paths["metrics"],
                                  eval_split or ecfg["split"], ecfg["label"])),
        ("report", lambda: run_report([paths["metrics"]], ecfg["table_format"], [ecfg["label"]],
                                      paths["report"], paths["figure"])),
    ]
    results = {}
    for name, fn in stages:
        log.info("pipeline: running %s", name)
        try:
            results[name] = fn()
        except (AidrError, OSError, ValueError, KeyError) as exc:
            raise StageError(name, exc) from exc
    return results["eval"]


# -- argument parsing -----------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="run configuration JSON", **d)
    parser.add_argument("--seed", type=int, help="master seed (default: config seed)", **d)
    parser.add_argument("--out", help="output file or directory", **d)
    parser.add_argument("-v", "--verbose", action="store_true", **d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aidr", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        _global_flags(sp, suppress=True)
        return sp

    sp = add("simulate", help="transmit images over each link; write outcome JSON lines")
    sp.add_argument("--scenes", help="directory of PNG/raw RGB images (subdirectories are scenes)")
    sp.add_argument("--synthetic", type=int, help="use N procedurally generated images instead")
    sp.add_argument("--scenarios", help="JSON array of degradation scenarios")
    sp.add_argument("--quality", help="also write per-image quality reports (JSON lines)")
    sp.add_argument("--figure", help="render a BER-vs-SNR figure to this path")

    sp = add("ber-curve", help="Monte Carlo BER of the 4-FSK link against the closed form")
    sp.add_argument("--snr", type=float, nargs="+", default=[0, 2, 4, 6, 8, 10, 12, 14])
    sp.add_argument("--symbols", type=int, default=200_000)
    sp.add_argument("--figure")

    sp = add("gen-dataset", help="build the reasoning dataset")
    sp.add_argument("--scenes", help="directory of scene images (default: synthetic scenes)")
    sp.add_argument("--count", type=int, help="number of images/questions")
    sp.add_argument("--split", choices=["random", "scene", "none"])
    sp.add_argument("--no-images", action="store_true", help="do not write received images")
    sp.add_argument("--context-style", choices=["numeric", "prose"], help="how telemetry is worded")

    sp = add("teach", help="generate lecture, plan and rationales with the teacher LLM")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--endpoint")
    sp.add_argument("--model")
    sp.add_argument("--concurrency", type=int)
    sp.add_argument("--batch-size", type=int, help="QA pairs shown in the lecture and plan prompts")
    sp.add_argument("--group-by", choices=["dataset", "scene"])
    sp.add_argument("--mock", action="store_true", help="use the built-in deterministic teacher")
    sp.add_argument("--attach-out", help="also write the dataset with rationales attached")

    sp = add("infer", help="two-stage rationale -> answer inference")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--backend", choices=["toy", "gold", "mock", "random", "remote"])
    sp.add_argument("--model-config")
    sp.add_argument("--split", default="test", help="train|val|test|all|auto")

    sp = add("eval", help="score predictions against the gold dataset")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--split", default="auto")
    sp.add_argument("--label", default="")

    sp = add("report", help="render metric reports as a table (and optionally a figure)")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True)
    sp.add_argument("--format", choices=["markdown", "csv", "text"], default="markdown")
    sp.add_argument("--labels", nargs="+")
    sp.add_argument("--figure")

    sp = add("pipeline", help="simulate -> gen-dataset -> teach -> infer -> eval -> report")
    sp.add_argument("--scenes")
    sp.add_argument("--count", type=int)
    sp.add_argument("--split", choices=["random", "scene", "none"])
    sp.add_argument("--backend", choices=["toy", "gold", "mock", "random", "remote"])
    sp.add_argument("--endpoint")
    sp.add_argument("--mock", action="store_true")
    sp.add_argument("--eval-split")
    return p


def _need_out(args, what="--out"):
    out = getattr(args, "out", None)
    if not out:
        raise UsageError(f"{args.command} requires {what}")
    return out


def dispatch(args, cfg: RunConfig) -> int:
    seed = args.seed if getattr(args, "seed", None) is not None else cfg["seed"]
    c = args.command
    if c == "simulate":
        run_simulate(cfg, seed, _need_out(args), args.scenes, args.synthetic, args.scenarios or cfg["scenario_file"],
                     args.quality, args.figure)
    elif c == "ber-curve":
        doc = run_ber_curve(seed, args.snr, args.symbols, getattr(args, "out", None), args.figure)
        if not getattr(args, "out", None):
            print(json.dumps(doc["points"], indent=1))
    elif c == "gen-dataset":
        run_gen_dataset(cfg, seed, _need_out(args), args.scenes, args.count, args.split,
                        False if args.no_images else None, args.context_style)
    elif c == "teach":
        run_teach(cfg, args.dataset, _need_out(args), endpoint=args.endpoint, model=args.model,
                  mock=True if args.mock else None,
                  concurrency=args.concurrency, batch_size=args.batch_size, group_by=args.group_by,
                  attach_out=args.attach_out)
    elif c == "infer":
        run_infer(cfg, args.dataset, _need_out(args), args.backend, args.model_config, args.split, seed)
    elif c == "eval":
        report = run_eval(args.predictions, args.gold, _need_out(args), args.split, args.label)
        print(report_table([report], [args.label or "predictions"]), end="")
    elif c == "report":
        table = run_report(args.inputs, args.format, args.labels, getattr(args, "out", None), args.figure)
        print(table, end="")
    elif c == "pipeline":
        report = run_pipeline(cfg, seed, _need_out(args, "--out DIR"), count=args.count, split=args.split,
                              backend=args.backend, mock=True if args.mock else None,
                              endpoint=args.endpoint, scenes_dir=args.scenes, eval_split=args.eval_split)
        print(report_table([report], [cfg["evaluation"]["label"]]), end="")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _COMMAND_LINE[:] = ["aidr", *argv]
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig.from_dict({})
        return dispatch(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"aidr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        if isinstance(exc.cause, (UsageError, ConfigError)):
            print(f"aidr pipeline: error: {exc}", file=sys.stderr)
            return 2
        print(f"aidr pipeline: {exc}", file=sys.stderr)
        return 1
    except EndpointUnreachableError as exc:
        print(f"aidr {args.command}: endpoint unreachable: {exc}", file=sys.stderr)
        return 1
    except (AidrError, OSError) as exc:
        print(f"aidr {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
