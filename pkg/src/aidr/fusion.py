"""Toy-scale multimodal CoT student: encode, align, gate, fuse, decode.

Shapes follow the row convention: ``H_L`` is ``(n_tokens, d)``, ``H_V`` is
``(n_patches, d)``. The gate is elementwise,
``lambda = sigmoid(H_L W_L^T + H_Va W_V^T)``, and the fused representation is
``H_f = (1 - lambda) * H_L + lambda * H_Va``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import derive_seed
from .dataset import OPTION_LETTERS, ReasoningQuestion, render_options
from .errors import ConfigError, ExtractionError, InvalidInputError, InvariantError, ShapeError, VocabularyError
from .llm import LlmRequest, complete_with_retry

# Fine-tuning settings of the full-size student, kept for provenance only.
TRAINING_PROVENANCE = {"epochs": 30, "learning_rate": 5e-5, "max_input_tokens": 512}


# -- encoders -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    table: np.ndarray

    def __call__(self, token_id: int) -> np.ndarray:
        if not 0 <= token_id < self.table.shape[0]:
            raise VocabularyError(f"token id {token_id} outside vocabulary of size {self.table.shape[0]}")
        return self.table[token_id]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    values: np.ndarray
    token_ids: tuple


def encode_language(token_ids: Sequence[int], provider) -> TokenMatrix:
    ids = [int(t) for t in token_ids]
    if not ids:
        raise InvalidInputError("cannot encode an empty token list")
    rows = np.stack([np.asarray(provider(t), dtype=np.float64) for t in ids])
    if not np.all(np.isfinite(rows)):
        raise InvalidInputError("embedding provider returned non-finite values")
    return TokenMatrix(rows, tuple(ids))


def encode_vision(image: np.ndarray, projection: np.ndarray, grid: int = 4) -> np.ndarray:
    """Patch features: mean colour of each cell of a ``grid x grid`` tiling, projected to ``d``.

    ``projection`` has shape ``(d, 3)``. Returns an ``(n_patches, d)`` matrix.
    """
    img = np.asarray(image, dtype=np.float64) / 255.0
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise InvalidInputError(f"expected an RGB raster, got shape {img.shape}")
    rows = np.array_split(np.arange(img.shape[0]), min(grid, img.shape[0]))
    cols = np.array_split(np.arange(img.shape[1]), min(grid, img.shape[1]))
    means = np.array([img[r[0]:r[-1] + 1, c[0]:c[-1] + 1].mean(axis=(0, 1)) for r in rows for c in cols])
    return (means - 0.5) @ projection.T


# -- fusion -------------------------------------------------------------------

def _check_2d(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {m.shape}")
    return m


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def attention_weights(H_L: np.ndarray, H_V: np.ndarray) -> np.ndarray:
    H_L, H_V = _check_2d("H_L", H_L), _check_2d("H_V", H_V)
    if H_L.shape[1] != H_V.shape[1]:
        raise ShapeError(f"text dim {H_L.shape[1]} != vision dim {H_V.shape[1]}")
    if H_V.shape[0] < 1:
        raise ShapeError("need at least one image patch")
    return softmax(H_L @ H_V.T / math.sqrt(H_L.shape[1]), axis=1)


def align_attention(H_L: np.ndarray, H_V: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product attention, text queries over image patches."""
    return attention_weights(H_L, H_V) @ np.asarray(H_V, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class FusionParams:
    W_L: np.ndarray
    W_V: np.ndarray

    def __post_init__(self):
        for name in ("W_L", "W_V"):
            w = getattr(self, name)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ShapeError(f"{name} must be square, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise InvalidInputError(f"{name} has non-finite entries")
        if self.W_L.shape != self.W_V.shape:
            raise ShapeError(f"W_L {self.W_L.shape} and W_V {self.W_V.shape} differ")

    @property
    def dim(self) -> int:
        return self.W_L.shape[0]

    @classmethod
    def init(cls, d: int, seed: int) -> "FusionParams":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.1, 0.1, (d, d)), rng.uniform(-0.1, 0.1, (d, d)))

    @classmethod
    def zeros(cls, d: int) -> "FusionParams":
        return cls(np.zeros((d, d)), np.zeros((d, d)))


def _gate_preactivation(H_L, H_Va, params: FusionParams) -> np.ndarray:
    H_L, H_Va = _check_2d("H_L", H_L), _check_2d("H_Va", H_Va)
    if H_L.shape != H_Va.shape:
        raise ShapeError(f"H_L {H_L.shape} and H_Va {H_Va.shape} differ")
    if H_L.shape[1] != params.dim:
        raise ShapeError(f"feature dim {H_L.shape[1]} does not match params dim {params.dim}")
    return H_L @ params.W_L.T + H_Va @ params.W_V.T


def gate(H_L: np.ndarray, H_Va: np.ndarray, params: FusionParams) -> np.ndarray:
    return sigmoid(_gate_preactivation(H_L, H_Va, params))


def fuse(H_L: np.ndarray, H_Va: np.ndarray, lam: np.ndarray, *, strict: bool = True) -> np.ndarray:
    """Convex combination of text and aligned vision features.

    With ``strict=False`` the closed interval [0, 1] is accepted, which lets
    callers force the gate to its limits.
    """
    H_L, H_Va, lam = (np.asarray(m, dtype=np.float64) for m in (H_L, H_Va, lam))
    if not (H_L.shape == H_Va.shape == lam.shape):
        raise ShapeError(f"shapes differ: H_L {H_L.shape}, H_Va {H_Va.shape}, lambda {lam.shape}")
    ok = (lam > 0) & (lam < 1) if strict else (lam >= 0) & (lam <= 1)
    if not np.all(ok):
        bound = "(0, 1)" if strict else "[0, 1]"
        raise InvariantError(f"gate values must lie in {bound}; got range [{lam.min()}, {lam.max()}]")
    return (1.0 - lam) * H_L + lam * H_Va


@dataclass(frozen=True, eq=False)
class FusionState:
    H_L: np.ndarray
    H_V: np.ndarray
    H_Va: np.ndarray
    lam: np.ndarray
    H_f: np.ndarray


def fusion_forward(H_L, H_V, params: FusionParams) -> FusionState:
    H_Va = align_attention(H_L, H_V)
    lam = gate(H_L, H_Va, params)
    return FusionState(np.asarray(H_L, float), np.asarray(H_V, float), H_Va, lam, fuse(H_L, H_Va, lam))


# -- gradient check -------------------------------------------------------------

def fusion_loss(H_L, H_V, params: FusionParams) -> float:
    """Scalar test loss: sum of squared fused entries."""
    H_f = fusion_forward(H_L, H_V, params).H_f
    return float(np.sum(H_f * H_f))


def fusion_loss_grads(H_L, H_V, params: FusionParams):
    """Analytic gradients of ``fusion_loss`` w.r.t. ``W_L`` and ``W_V``."""
    s = fusion_forward(H_L, H_V, params)
    dlam = 2.0 * s.H_f * (s.H_Va - s.H_L)
    dz = dlam * s.lam * (1.0 - s.lam)
    return dz.T @ s.H_L, dz.T @ s.H_Va


def numeric_grads(H_L, H_V, params: FusionParams, epsilon: float):
    grads = []
    for name in ("W_L", "W_V"):
        w = getattr(params, name)
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus, minus = w.copy(), w.copy()
            plus[idx] += epsilon
            minus[idx] -= epsilon
            p_plus = FusionParams(**{**_as_kwargs(params), name: plus})
            p_minus = FusionParams(**{**_as_kwargs(params), name: minus})
            g[idx] = (fusion_loss(H_L, H_V, p_plus) - fusion_loss(H_L, H_V, p_minus)) / (2 * epsilon)
        grads.append(g)
    return tuple(grads)


def _as_kwargs(p: FusionParams) -> dict:
    return {"W_L": p.W_L, "W_V": p.W_V}


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def grad_check(H_L, H_V, params: FusionParams, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    analytic = fusion_loss_grads(H_L, H_V, params)
    numeric = numeric_grads(H_L, H_V, params, epsilon)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


# -- toy decoder ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ToyDecoderParams:
    E: np.ndarray
    W_o: np.ndarray
    bos: int = 0

    def __post_init__(self):
        if self.E.shape != self.W_o.shape:
            raise ShapeError(f"E {self.E.shape} and W_o {self.W_o.shape} must both be (V, d)")
        if not 0 <= self.bos < self.vocab_size:
            raise VocabularyError(f"BOS id {self.bos} outside vocabulary")

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @classmethod
    def init(cls, vocab_size: int, d: int, seed: int, bos: int = 0) -> "ToyDecoderParams":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, 0.5, (vocab_size, d)), rng.normal(0, 0.5, (vocab_size, d)), bos)


def _check_token(tok: int, params: ToyDecoderParams) -> int:
    tok = int(tok)
    if not 0 <= tok < params.vocab_size:
        raise VocabularyError(f"token {tok} outside vocabulary of size {params.vocab_size}")
    return tok


def decode_step(H_f: np.ndarray, prev_token: int, params: ToyDecoderParams) -> np.ndarray:
    prev = _check_token(prev_token, params)
    h = np.mean(_check_2d("H_f", H_f), axis=0) + params.E[prev]
    return softmax(params.W_o @ h)


def sequence_log_prob(H_f: np.ndarray, target_tokens: Sequence[int], params: ToyDecoderParams) -> float:
    """log p(y | H_f) as the sum of per-step conditionals, starting from BOS."""
    tokens = [_check_token(t, params) for t in target_tokens]
    if not tokens:
        raise InvalidInputError("target sequence is empty")
    total, prev = 0.0, params.bos
    for t in tokens:
        total += math.log(decode_step(H_f, prev, params)[t])
        prev = t
    return total


def greedy_decode(H_f: np.ndarray, params: ToyDecoderParams, max_len: int, eos: int | None = None) -> list:
    out, prev = [], params.bos
    for _ in range(max_len):
        prev = int(np.argmax(decode_step(H_f, prev, params)))
        if eos is not None and prev == eos:
            break
        out.append(prev)
    return out


# -- answer extraction & two-stage inference -------------------------------------

_PAREN = re.compile(r"\(([A-H])\)")
_BARE = re.compile(r"\b([A-H])\b")


def extract_answer(text: str) -> int:
    m = _PAREN.search(text) or _BARE.search(text)
    if m is None:
        raise ExtractionError(text)
    return OPTION_LETTERS.index(m.group(1))


def stage1_input(q: ReasoningQuestion) -> str:
    return (f"Question: {q.question}\nContext: {q.context}\nOptions: {render_options(q.choices)}\n"
            f"Solution:")


def stage2_input(x1: str, rationale: str) -> str:
    return f"{x1} {rationale}\nAnswer:"


@dataclass(frozen=True)
class InferenceResult:
    question_id: str
    rationale: str
    answer: int | None
    raw_answer: str
    stage1_input: str = field(repr=False, default="")
    stage2_input: str = field(repr=False, default="")


def two_stage_infer(q: ReasoningQuestion, vision, rationale_backend, answer_backend) -> InferenceResult:
    """Stage 1 generates a rationale; stage 2 sees the question plus that rationale and answers.

    Raises ``ExtractionError`` carrying the raw text when no option letter can be read.
    """
    x1 = stage1_input(q)
    rationale = rationale_backend.generate("rationale", q, x1, vision).strip()
    x2 = stage2_input(x1, rationale)
    raw = answer_backend.generate("answer", q, x2, vision)
    return InferenceResult(q.id, rationale, extract_answer(raw), raw, x1, x2)


class ScriptedBackend:
    """Returns fixed text per stage (or the result of a callable)."""

    def __init__(self, rationale="", answer=""):
        self.outputs = {"rationale": rationale, "answer": answer}
        self.seen: list[tuple[str, str]] = []

    def generate(self, stage, q, text, vision) -> str:
        self.seen.append((stage, text))
        out = self.outputs[stage]
        return out(q, text) if callable(out) else out


class GoldEchoBackend:
    """Oracle reasoner: repeats the gold rationale and answer."""

    def generate(self, stage, q, text, vision) -> str:
        if stage == "rationale":
            return q.rationale or ""
        return f"The answer is ({q.answer_letter})."


class UniformRandomBackend:
    """Picks an option uniformly at random, seeded per question."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, stage, q, text, vision) -> str:
        if stage == "rationale":
            return ""
        rng = np.random.default_rng(derive_seed(self.seed, "uniform", q.id))
        return f"({OPTION_LETTERS[int(rng.integers(8))]})"


class ChatAnswerBackend:
    """Remote LLM used as the student through the chat-completion endpoint."""

    def __init__(self, llm, model: str, retry=None, max_tokens: int = 512):
        self.llm, self.model, self.retry, self.max_tokens = llm, model, retry, max_tokens

    def generate(self, stage, q, text, vision) -> str:
        suffix = ("\nExplain step by step which option is the cause." if stage == "rationale"
                  else "\nReply with the option letter in parentheses, e.g. (A).")
        req = LlmRequest.user(self.model, text + suffix, tag=f"{stage}:{q.id}", max_tokens=self.max_tokens)
        resp, _ = complete_with_retry(self.llm, req, self.retry)
        return resp.text


_WORD = re.compile(r"\(?[A-Za-z0-9]+\)?|[^\sA-Za-z0-9]")

BASE_VOCAB = (
    ["<bos>", "<eos>", "<unk>"] + [f"({c})" for c in OPTION_LETTERS]
    + "1. 2. 3. 4. the is are a of and so link links snr throughput ber psnr latency wifi 5g lifi noise "
      "collapse outage blockage low high drop healthy model fault rendering image channel therefore cause "
      "most likely aggregation all".split()
)


class ToyVocabulary:
    def __init__(self, words: Sequence[str] = BASE_VOCAB):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.bos, self.eos, self.unk = 0, 1, 2

    def __len__(self):
        return len(self.words)

    def encode(self, text: str) -> list:
        toks = []
        for w in _WORD.findall(text):
            key = w if w in self.index else w.lower()
            toks.append(self.index.get(key, self.unk))
        return toks

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids)


@dataclass
class ToyModelConfig:
    d: int = 16
    seed: int = 0
    patch_grid: int = 4
    max_rationale_tokens: int = 24
    max_input_tokens: int = 512

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown toy model keys: {', '.join(sorted(unknown))}")
        return cls(**d)


class ToyStudent:
    """Fully specified miniature student; one parameter set per stage."""

    def __init__(self, config: ToyModelConfig | None = None, vocab: ToyVocabulary | None = None):
        self.config = config or ToyModelConfig()
        self.vocab = vocab or ToyVocabulary()
        c, V = self.config, len(self.vocab)
        self.embeddings = EmbeddingTable(np.random.default_rng(derive_seed(c.seed, "emb")).normal(0, 1, (V, c.d)))
        self.projection = np.random.default_rng(derive_seed(c.seed, "proj")).normal(0, 1, (c.d, 3))
        self.fusion = {s: FusionParams.init(c.d, derive_seed(c.seed, "fusion", s)) for s in ("rationale", "answer")}
        self.decoder = {s: ToyDecoderParams.init(V, c.d, derive_seed(c.seed, "dec", s), self.vocab.bos)
                        for s in ("rationale", "answer")}

    def fused(self, stage: str, text: str, vision) -> np.ndarray:
        ids = self.vocab.encode(text)[-self.config.max_input_tokens:] or [self.vocab.unk]
        H_L = encode_language(ids, self.embeddings).values
        if vision is None:
            H_V = np.zeros((1, self.config.d))
        else:
            H_V = encode_vision(vision, self.projection, self.config.patch_grid)
        return fusion_forward(H_L, H_V, self.fusion[stage]).H_f

    def generate(self, stage, q, text, vision) -> str:
        H_f = self.fused(stage, text, vision)
        dec = self.decoder[stage]
        if stage == "rationale":
            return self.vocab.decode(greedy_decode(H_f, dec, self.config.max_rationale_tokens, self.vocab.eos))
        # answers are constrained to the eight option tokens
        letters = [self.vocab.index[f"({c})"] for c in OPTION_LETTERS]
        probs = decode_step(H_f, dec.bos, dec)
        return self.vocab.words[letters[int(np.argmax(probs[letters]))]]


def load_model_config(path) -> dict:
    doc = json.loads(Path(path).read_text())
    allowed = {"backend", "d", "seed", "patch_grid", "max_rationale_tokens", "max_input_tokens", "endpoint",
               "model"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
    if doc.get("backend", "toy") not in ("toy", "mock", "gold", "random", "remote"):
        raise ConfigError(f"unknown backend {doc.get('backend')!r}")
    return doc
