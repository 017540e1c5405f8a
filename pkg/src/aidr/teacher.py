"""Three-step plan-based chain-of-thought prompting: lecture, plan, rationale.

Lecture and plan are produced once per dataset (or once per scene) from a
handful of QA pairs; rationales are produced per question. Progress is
checkpointed after every finished rationale so an interrupted run resumes
without re-requesting completed questions.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .dataset import OPTION_LETTERS, DatasetManifest, ReasoningQuestion, render_options
from .degradation import Effect
from .errors import AuthenticationError, EndpointUnreachableError, FormatVersionError, InvalidInputError, \
    SequencingError, TransportError
from .llm import LlmRequest, MockBackend, RetryPolicy, complete_with_retry

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"

LECTURE_INSTRUCTION = (
    "Based on the problems above, please provide a general lecture about the current multi-access "
    "technologies for image transmission and the 3D Gaussian Splatting model for the 3D rendering task, "
    "using no more than three sentences."
)
PLAN_INSTRUCTION = (
    "Based on the lecture and problems above, please try to understand these issues and devise a general "
    "and brief step-by-step plan to solve these problems, starting with 1, 2, 3..."
)
RATIONALE_INSTRUCTION = (
    "Based on the lecture, plan, and problems above, please execute the plan and then reason the problem "
    "step by step, starting with 1, 2, 3..."
)

ALL_GROUP = "all"


def format_qa_pair(q: ReasoningQuestion) -> str:
    return (f"Question: {q.question}\n"
            f"Context: {q.context}\n"
            f"Options: {render_options(q.choices)}\n"
            f"Answer: ({q.answer_letter}) {q.choices[q.answer]}")


def _qa_block(qa_pairs: Sequence[ReasoningQuestion]) -> str:
    return "QA pairs:\n" + "\n\n".join(format_qa_pair(q) for q in qa_pairs)


def _sentence(label: str, text: str) -> str:
    text = text.strip()
    return f"{label}: {text}" if text.endswith((".", "!", "?")) else f"{label}: {text}."


def build_lecture_prompt(qa_pairs: Sequence[ReasoningQuestion]) -> str:
    if not qa_pairs:
        raise InvalidInputError("lecture prompt needs at least one QA pair")
    return f"{_qa_block(qa_pairs)}\n\n{LECTURE_INSTRUCTION}"


def build_plan_prompt(lecture: str, qa_pairs: Sequence[ReasoningQuestion]) -> str:
    if not lecture or not lecture.strip():
        raise SequencingError("plan prompt requires a lecture; run step 1 first")
    if not qa_pairs:
        raise InvalidInputError("plan prompt needs at least one QA pair")
    return f"{_sentence('Lecture', lecture)}\n{_qa_block(qa_pairs)}\n\n{PLAN_INSTRUCTION}"


def build_rationale_prompt(lecture: str, plan: str, qa: ReasoningQuestion) -> str:
    if not lecture or not lecture.strip():
        raise SequencingError("rationale prompt requires a lecture; run step 1 first")
    if not plan or not plan.strip():
        raise SequencingError("rationale prompt requires a plan; run step 2 first")
    return (f"{_sentence('Lecture', lecture)}\n{_sentence('Plan', plan)}\n"
            f"{_qa_block([qa])}\n\n{RATIONALE_INSTRUCTION}")


@dataclass
class PCoTRecord:
    lectures: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)
    rationales: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    model_name: str = ""
    temperature: float = 0.0
    group_by: str = "dataset"
    token_counts: dict = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})
    timestamps: dict = field(default_factory=dict)
    retries: int = 0
    format_version: str = FORMAT_VERSION

    @property
    def lecture(self) -> str:
        return self.lectures.get(ALL_GROUP, "")

    @property
    def plan(self) -> str:
        return self.plans.get(ALL_GROUP, "")

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "group_by": self.group_by,
            "lectures": dict(sorted(self.lectures.items())),
            "plans": dict(sorted(self.plans.items())),
            "rationales": dict(sorted(self.rationales.items())),
            "failures": dict(sorted(self.failures.items())),
            "token_counts": dict(self.token_counts),
            "timestamps": dict(self.timestamps),
            "retries": self.retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PCoTRecord":
        if d.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(f"PCoT record format_version {d.get('format_version')!r} is not supported")
        return cls(lectures=dict(d["lectures"]), plans=dict(d["plans"]), rationales=dict(d["rationales"]),
                   failures=dict(d.get("failures", {})), model_name=d.get("model_name", ""),
                   temperature=d.get("temperature", 0.0), group_by=d.get("group_by", "dataset"),
                   token_counts=dict(d.get("token_counts", {})), timestamps=dict(d.get("timestamps", {})),
                   retries=int(d.get("retries", 0)))


def save_record(record: PCoTRecord, path) -> None:
    _atomic_write(Path(path), json.dumps(record.to_dict(), indent=1, ensure_ascii=False) + "\n")


def load_record(path) -> PCoTRecord:
    return PCoTRecord.from_dict(json.loads(Path(path).read_text()))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_path_for(out_path) -> Path:
    p = Path(out_path)
    return p.with_name(p.name + ".ckpt")


def select_examples(questions: Sequence[ReasoningQuestion], limit: int) -> list:
    """One QA pair per answer option first (in id order), then fill up to ``limit``."""
    ordered = sorted(questions, key=lambda q: q.id)
    picked, seen = [], set()
    for q in ordered:
        if q.answer not in seen:
            seen.add(q.answer)
            picked.append(q)
    for q in ordered:
        if len(picked) >= limit:
            break
        if q not in picked:
            picked.append(q)
    return sorted(picked[:limit], key=lambda q: q.id)


def _wall_clock() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def generate_pcot(
    manifest: DatasetManifest,
    backend,
    *,
    model: str = "gpt-3.5-turbo",
    batch_size: int = 8,
    concurrency_limit: int = 4,
    checkpoint: str | os.PathLike | None = None,
    group_by: str = "dataset",
    example_split: str | None = "train",
    retry: RetryPolicy | None = None,
    clock: Callable[[], str] = _wall_clock,
    max_tokens: int = 512,
) -> PCoTRecord:
    """Run the three prompting steps over a dataset.

    ``batch_size`` is the number of QA pairs shown in the lecture and plan
    prompts. Lecture/plan examples come from ``example_split`` when it is
    non-empty, else from all questions. With ``group_by="scene"`` a separate
    lecture and plan are produced for every scene.
    """
    if concurrency_limit < 1:
        raise InvalidInputError("concurrency_limit must be >= 1")
    if group_by not in ("dataset", "scene"):
        raise InvalidInputError(f"group_by must be 'dataset' or 'scene', got {group_by!r}")
    retry = retry or RetryPolicy()
    ckpt = Path(checkpoint) if checkpoint else None
    if ckpt is not None and ckpt.exists():
        record = load_record(ckpt)
        log.info("resuming from %s: %d rationales done", ckpt, len(record.rationales))
        record.failures.clear()
    else:
        record = PCoTRecord(model_name=model, group_by=group_by, timestamps={"started": clock()})

    def persist():
        if ckpt is not None:
            save_record(record, ckpt)

    def call(prompt: str, tag: str):
        req = LlmRequest.user(model, prompt, tag=tag, max_tokens=max_tokens)
        resp, used = complete_with_retry(backend, req, retry)
        return resp, used

    def account(resp, used):
        record.retries += used
        for k in ("prompt_tokens", "completion_tokens"):
            record.token_counts[k] = record.token_counts.get(k, 0) + int(resp.usage.get(k, 0))

    questions = list(manifest.questions)
    groups: dict[str, list] = {}
    for q in questions:
        groups.setdefault(q.scene if group_by == "scene" else ALL_GROUP, []).append(q)

    for name, members in sorted(groups.items()):
        pool = [q for q in members if example_split and q.split == example_split] or members
        examples = select_examples(pool, batch_size)
        if name not in record.lectures:
            resp, used = call(build_lecture_prompt(examples), f"lecture:{name}")
            account(resp, used)
            record.lectures[name] = resp.text.strip()
            persist()
        if name not in record.plans:
            resp, used = call(build_plan_prompt(record.lectures[name], examples), f"plan:{name}")
            account(resp, used)
            record.plans[name] = resp.text.strip()
            persist()

    todo = [q for q in questions if q.id not in record.rationales]
    group_of = {q.id: (q.scene if group_by == "scene" else ALL_GROUP) for q in questions}

    def rationale_job(q: ReasoningQuestion):
        g = group_of[q.id]
        prompt = build_rationale_prompt(record.lectures[g], record.plans[g], q)
        return call(prompt, f"rationale:{q.id}")

    with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
        futures = {pool.submit(rationale_job, q): q for q in todo}
        try:
            for fut in as_completed(futures):
                q = futures[fut]
                try:
                    resp, used = fut.result()
                except AuthenticationError:
                    raise
                except (TransportError, EndpointUnreachableError) as exc:
                    log.error("rationale for %s failed after %d retries: %s", q.id, retry.max_retries, exc)
                    record.failures[q.id] = str(exc)
                    record.retries += retry.max_retries
                    continue
                account(resp, used)
                record.rationales[q.id] = resp.text.strip()
                persist()
        except BaseException:
            for f in futures:
                f.cancel()
            persist()
            raise

    record.timestamps["finished"] = clock()
    log.info("teaching done: %d rationales, %d failures, %d retries",
             len(record.rationales), len(record.failures), record.retries)
    return record


def attach_rationales(manifest: DatasetManifest, record: PCoTRecord):
    """Copy rationales onto questions; returns ``(manifest, warnings)``."""
    warnings = []
    out = []
    for q in manifest.questions:
        text = record.rationales.get(q.id)
        if text is None:
            warnings.append(f"no rationale for question {q.id}")
            out.append(q)
        else:
            out.append(replace(q, rationale=text))
    return replace(manifest, questions=out), warnings


# -- rule-based stand-in teacher ------------------------------------------------

MOCK_LECTURE = (
    "Multi-access transmission splits camera images across WiFi, 5G and LiFi links, so noise, capacity loss "
    "or blockage on any one link corrupts or delays part of every frame. "
    "The 3D Gaussian Splatting model renders the scene from these received views, so its output quality "
    "follows the fidelity of the transmitted images. "
    "When all links look healthy but rendering quality still drops, the fault lies in the AI model itself."
)
MOCK_PLAN = (
    "1. Read the SNR, throughput and BER of each access link. "
    "2. Compare them with healthy operating values to find links that are noisy, slow or blocked. "
    "3. Check whether the problem affects one link or all links. "
    "4. If no link is degraded, compare received image PSNR with rendering PSNR to test the AI model. "
    "5. Choose the option that explains the observations."
)


def _fmt_link(tel: dict, tech: str) -> str:
    t = tel[tech]
    return (f"{tech} has SNR {t['snr_db']:.1f} dB, throughput {t['throughput_bps'] / 1e6:.1f} Mbps "
            f"and BER {t['ber']:.2e}")


def rule_rationale(q: ReasoningQuestion) -> str:
    """Deterministic rationale grounded in the question's telemetry and gold answer."""
    tel = q.telemetry
    c = q.metadata.cause
    steps = []
    if c.tech is not None:
        steps.append(_fmt_link(tel, c.tech.value) + ".")
    else:
        steps.append("; ".join(_fmt_link(tel, t) for t in ("WiFi", "5G", "LiFi")) + ".")
    if c.effect is Effect.NOISE:
        steps.append(f"The {c.tech.value} SNR is well below its healthy level while its throughput is normal, "
                     f"so bit errors come from channel noise.")
    elif c.effect is Effect.THROUGHPUT:
        steps.append(f"The {c.tech.value} throughput has collapsed while its SNR stays normal, "
                     f"so images arrive late rather than corrupted.")
    elif c.effect is Effect.OUTAGE:
        steps.append("LiFi shows both a deep SNR drop and a throughput collapse, the signature of a "
                     "blocked optical link.")
    elif c.effect is Effect.AGGREGATION:
        steps.append("Every link shows a similar SNR drop, so the loss happens where the links are "
                     "aggregated rather than on a single access technology.")
    else:
        steps.append(f"All links are healthy and the received image PSNR is {tel['psnr_db']:.2f} dB, yet "
                     f"the rendering PSNR is only {tel['render_psnr_db']:.2f} dB.")
    steps.append(f"Therefore the most likely cause is ({OPTION_LETTERS[q.answer]}) {q.choices[q.answer]}.")
    return " ".join(f"{i}. {s}" for i, s in enumerate(steps, 1))


def mock_teacher(manifest: DatasetManifest, **kw) -> MockBackend:
    by_id = manifest.by_id()

    def respond(req: LlmRequest) -> str:
        kind, _, key = req.tag.partition(":")
        if kind == "lecture":
            return MOCK_LECTURE
        if kind == "plan":
            return MOCK_PLAN
        if kind == "rationale":
            return rule_rationale(by_id[key])
        raise InvalidInputError(f"mock teacher got an untagged request: {req.tag!r}")

    return MockBackend(respond, **kw)
