"""AI-DR style reasoning dataset: one multiple-choice question per transmitted image.

Records use ScienceQA field names on disk (``hint`` for the telemetry
context, ``image`` for the image path, ``solution`` for the rationale) so
multimodal-CoT tooling can read them; the ground-truth scenario rides along
under ``metadata``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import (ChannelOutcome, Tech, TechnologyProfile, default_profiles, derive_seed,
                      transmit_mats)
from .degradation import (DegradationScenario, QualityReport, gold_label, inject, measure_quality,
                          rendering_psnr, taxonomy)
from .errors import (DatasetParseError, FormatVersionError, IncompleteContextError, InvalidInputError,
                     InvalidSceneError)

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"
QUESTION_STEM = "Which of the following is most likely to cause degradation in 3D rendering performance?"
OPTION_LETTERS = "ABCDEFGH"
SPLITS = ("train", "val", "test", "unassigned")

# Image counts of the four captured scenes.
SCENE_COUNTS = {"Playroom": 900, "DrJohnson": 1052, "Truck": 1004, "Train": 1204}
SCENE_SPLIT = {"Playroom": "train", "DrJohnson": "train", "Train": "val", "Truck": "test"}

SEVERITY_RANGE = (0.5, 1.0)


def choices() -> list[str]:
    return [c.description for c in taxonomy()]


def render_options(opts: Sequence[str]) -> str:
    return " ".join(f"({OPTION_LETTERS[i]}) {o}" for i, o in enumerate(opts))


@dataclass(frozen=True)
class ReasoningQuestion:
    id: str
    question: str
    choices: list
    answer: int
    context: str
    image_ref: str
    scene: str
    metadata: DegradationScenario
    split: str = "unassigned"
    rationale: str | None = None
    telemetry: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.choices) != 8:
            raise InvalidInputError(f"{self.id}: expected 8 choices, got {len(self.choices)}")
        if not 0 <= self.answer <= 7:
            raise InvalidInputError(f"{self.id}: answer index {self.answer} out of range")
        if self.split not in SPLITS:
            raise InvalidInputError(f"{self.id}: unknown split {self.split!r}")
        if self.answer != gold_label(self.metadata):
            raise InvalidInputError(f"{self.id}: answer {self.answer} disagrees with scenario cause "
                                    f"{self.metadata.cause.code.value}")

    @property
    def answer_letter(self) -> str:
        return OPTION_LETTERS[self.answer]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "choices": list(self.choices),
            "answer": self.answer,
            "hint": self.context,
            "image": self.image_ref,
            "scene": self.scene,
            "split": self.split,
            "solution": self.rationale,
            "metadata": {"scenario": self.metadata.to_dict(), "telemetry": self.telemetry},
        }

    @classmethod
    def from_dict(cls, d: dict, line: int | None = None) -> "ReasoningQuestion":
        rid = d.get("id") if isinstance(d, dict) else None
        if not isinstance(d, dict):
            raise DatasetParseError("question record is not an object", line=line)
        for key in ("id", "question", "choices", "answer", "hint", "image", "scene", "split", "metadata"):
            if key not in d:
                raise DatasetParseError("missing required field", record_id=rid, field=key, line=line)
        if not isinstance(d["answer"], int) or isinstance(d["answer"], bool):
            raise DatasetParseError("answer must be an integer index", record_id=rid, field="answer", line=line)
        meta = d["metadata"]
        if not isinstance(meta, dict) or "scenario" not in meta:
            raise DatasetParseError("missing scenario block", record_id=rid, field="metadata.scenario", line=line)
        try:
            scenario = DegradationScenario.from_dict(meta["scenario"])
            return cls(
                id=d["id"], question=d["question"], choices=list(d["choices"]), answer=d["answer"],
                context=d["hint"], image_ref=d["image"], scene=d["scene"], metadata=scenario,
                split=d["split"], rationale=d.get("solution"), telemetry=meta.get("telemetry", {}),
            )
        except ValueError as exc:
            raise DatasetParseError(str(exc), record_id=rid, line=line) from exc


@dataclass(frozen=True)
class DatasetManifest:
    questions: list
    seed: int
    format_version: str = FORMAT_VERSION
    provenance: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict:
        out = {s: 0 for s in SPLITS}
        for q in self.questions:
            out[q.split] += 1
        return out

    def by_split(self, split: str) -> list:
        return [q for q in self.questions if q.split == split]

    def by_id(self) -> dict:
        return {q.id: q for q in self.questions}


# -- question construction ----------------------------------------------------

def render_context(outcomes: Sequence[ChannelOutcome], quality: QualityReport, render_psnr_db: float,
                   style: str = "numeric") -> str:
    """Telemetry block shown to the teacher and student.

    ``numeric`` lists one line of figures per link; ``prose`` states the
    same figures in sentences.
    """
    by_tech = {o.tech: o for o in outcomes}
    missing = [t.value for t in Tech if t not in by_tech]
    if missing:
        raise IncompleteContextError(f"telemetry lacks channels: {', '.join(missing)}")
    if style == "prose":
        parts = [f"The {t.value} link ran at {by_tech[t].snr_db:.1f} dB SNR and "
                 f"{by_tech[t].throughput_bps / 1e6:.1f} Mbps, with a bit error rate of {by_tech[t].ber:.2e} "
                 f"and {by_tech[t].latency_s * 1e6:.2f} us latency." for t in Tech]
        parts.append(f"The received image reached {quality.psnr_db:.2f} dB PSNR and the rendered view "
                     f"{render_psnr_db:.2f} dB.")
        return " ".join(parts)
    if style != "numeric":
        raise InvalidInputError(f"unknown context style {style!r}")
    lines = []
    for t in Tech:
        o = by_tech[t]
        lines.append(f"{t.value}: SNR {o.snr_db:.1f} dB, throughput {o.throughput_bps / 1e6:.1f} Mbps, "
                     f"BER {o.ber:.2e}, latency {o.latency_s * 1e6:.2f} us")
    lines.append(f"Received image PSNR: {quality.psnr_db:.2f} dB")
    lines.append(f"3D rendering PSNR: {render_psnr_db:.2f} dB")
    return "\n".join(lines)


def build_question(scenario: DegradationScenario, outcomes: Sequence[ChannelOutcome], quality: QualityReport,
                   *, qid: str, image_ref: str = "", model_fault: bool | None = None,
                   context_style: str = "numeric") -> ReasoningQuestion:
    if model_fault is None:
        model_fault = not scenario.cause.mats_based
    render = rendering_psnr(quality, model_fault)
    context = render_context(outcomes, quality, render, context_style)
    telemetry = {
        o.tech.value: {"snr_db": o.snr_db, "throughput_bps": o.throughput_bps, "ber": o.ber,
                       "latency_s": o.latency_s}
        for o in outcomes
    }
    telemetry["psnr_db"] = quality.psnr_db
    telemetry["render_psnr_db"] = render
    return ReasoningQuestion(
        id=qid, question=QUESTION_STEM, choices=choices(), answer=gold_label(scenario), context=context,
        image_ref=image_ref, scene=scenario.scene_id, metadata=scenario, telemetry=telemetry,
    )


def sample_scenario(seed: int, scene: str, image_id: str) -> DegradationScenario:
    rng = np.random.default_rng(derive_seed(seed, "scenario", image_id))
    code = "ABCDEFGH"[int(rng.integers(8))]
    severity = round(float(rng.uniform(*SEVERITY_RANGE)), 4)
    return DegradationScenario.make(code, severity, seed=derive_seed(seed, image_id), scene_id=scene)


@dataclass
class SimulatedImage:
    question: ReasoningQuestion
    received: np.ndarray
    outcomes: list


def simulate_question(image: np.ndarray, scene: str, image_id: str, seed: int,
                      profiles: Sequence[TechnologyProfile] | None = None,
                      image_ref: str = "", scenario: DegradationScenario | None = None,
                      context_style: str = "numeric") -> SimulatedImage:
    """Degrade the links per a sampled scenario, send the image, and write the question."""
    nominal = list(profiles) if profiles is not None else default_profiles()
    if scenario is None:
        scenario = sample_scenario(seed, scene, image_id)
    inj = inject(scenario, nominal)
    tx_seed = derive_seed(scenario.scenario_id, image_id)
    outcomes, received = transmit_mats(image, inj.profiles, tx_seed, nominal=nominal, origin=image_id)
    quality = measure_quality(image, received, {o.tech.value: o.ber for o in outcomes})
    q = build_question(scenario, outcomes, quality, qid=image_id, image_ref=image_ref,
                       model_fault=inj.model_fault, context_style=context_style)
    return SimulatedImage(q, received, outcomes)


# -- synthetic scenes ---------------------------------------------------------

def synthetic_image(scene: str, index: int, size: int = 16) -> np.ndarray:
    """Procedural stand-in for a captured camera view: smooth gradient plus a few blocks."""
    rng = np.random.default_rng(derive_seed("synthetic", scene, index))
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0, 255, 3)
    slope = rng.uniform(-120, 120, (2, 3))
    img = base + x[..., None] * slope[0] + y[..., None] * slope[1]
    for _ in range(3):
        r0, c0 = rng.integers(0, size, 2)
        h, w = rng.integers(1, max(2, size // 3), 2)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0, 255, 3)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_counts(total: int) -> dict:
    """Distribute ``total`` images over the four scenes in the captured proportions."""
    if total <= 0:
        raise InvalidInputError("count must be positive")
    full = sum(SCENE_COUNTS.values())
    if total == full:
        return dict(SCENE_COUNTS)
    raw = {s: total * n / full for s, n in SCENE_COUNTS.items()}
    counts = {s: int(v) for s, v in raw.items()}
    for s in sorted(raw, key=lambda s: -(raw[s] - counts[s]))[: total - sum(counts.values())]:
        counts[s] += 1
    return counts


def synthetic_images(counts: dict, size: int = 16) -> Iterable[tuple]:
    for scene, n in counts.items():
        for i in range(n):
            yield scene, f"{scene}-{i:05d}", synthetic_image(scene, i, size)


def build_questions(images: Iterable[tuple], seed: int, profiles: Sequence[TechnologyProfile] | None = None,
                    image_ref=None, on_received=None, context_style: str = "numeric") -> list:
    """Create one question per ``(scene, image_id, raster)`` triple.

    ``image_ref(scene, image_id)`` gives the stored path; ``on_received`` is
    called with ``(question, received_raster)`` so callers can persist images.
    """
    out = []
    for scene, image_id, img in images:
        ref = image_ref(scene, image_id) if image_ref else f"images/{scene}/{image_id}.png"
        sim = simulate_question(img, scene, image_id, seed, profiles, ref, context_style=context_style)
        if on_received is not None:
            on_received(sim.question, sim.received)
        out.append(sim.question)
    return out


# -- splitting ----------------------------------------------------------------

def split_random(questions: Sequence[ReasoningQuestion], seed: int) -> DatasetManifest:
    """3:1:1 shuffle split; val and test get ``n // 5`` each, train takes the rest."""
    n = len(questions)
    if n == 0:
        raise InvalidInputError("cannot split an empty question list")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = n_test = n // 5
    labels = np.empty(n, dtype=object)
    labels[perm[:n_val]] = "val"
    labels[perm[n_val:n_val + n_test]] = "test"
    labels[perm[n_val + n_test:]] = "train"
    return DatasetManifest([replace(q, split=str(s)) for q, s in zip(questions, labels)], seed)


def split_by_scene(questions: Sequence[ReasoningQuestion], seed: int = 0) -> DatasetManifest:
    out = []
    for q in questions:
        if q.scene not in SCENE_SPLIT:
            raise InvalidSceneError(f"question {q.id}: scene {q.scene!r} has no split assignment "
                                    f"(known: {', '.join(SCENE_SPLIT)})")
        out.append(replace(q, split=SCENE_SPLIT[q.scene]))
    return DatasetManifest(out, seed)


# -- persistence --------------------------------------------------------------

def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "format_version": manifest.format_version,
        "seed": manifest.seed,
        "counts": manifest.counts,
        "provenance": manifest.provenance,
        "questions": [q.to_dict() for q in manifest.questions],
    }


def write_dataset(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=1, ensure_ascii=False) + "\n")


def read_dataset(path) -> DatasetManifest:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise DatasetParseError("top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"dataset format_version {version!r} is not supported (expected {FORMAT_VERSION!r})")
    for key in ("questions", "seed", "counts"):
        if key not in doc:
            raise DatasetParseError("missing top-level field", field=key)
    questions = [ReasoningQuestion.from_dict(d) for d in doc["questions"]]
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DatasetParseError("duplicate question id", record_id=dup, field="id")
    manifest = DatasetManifest(questions, int(doc["seed"]), version, doc.get("provenance", {}))
    if doc["counts"] != manifest.counts:
        raise DatasetParseError(f"counts {doc['counts']} disagree with questions {manifest.counts}", field="counts")
    return manifest


def generate_synthetic_dataset(total: int = sum(SCENE_COUNTS.values()), seed: int = 0, split: str = "random",
                               size: int = 16, profiles=None, on_received=None,
                               context_style: str = "numeric") -> DatasetManifest:
    questions = build_questions(synthetic_images(synthetic_counts(total), size), seed, profiles,
                                on_received=on_received, context_style=context_style)
    return apply_split(questions, split, seed)


def apply_split(questions, split: str, seed: int) -> DatasetManifest:
    if split == "random":
        return split_random(questions, seed)
    if split == "scene":
        return split_by_scene(questions, seed)
    if split == "none":
        return DatasetManifest(list(questions), seed)
    raise InvalidInputError(f"unknown split strategy {split!r}")
