"""Assembly and retrieval task logic: segmentation, captions, embeddings,
ranking, Recall@k, script composition, and the assembly manifest."""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np


class TaskError(ValueError):
    pass


class NonpositiveDuration(TaskError):
    pass


class EmptyText(TaskError):
    pass


class DimMismatch(TaskError):
    pass


class ZeroVector(TaskError):
    pass


class MissingTruth(TaskError, KeyError):
    pass


class EmptySelection(TaskError):
    pass


class LengthMismatch(TaskError):
    pass


class DuplicateClip(TaskError):
    pass


# -- segmentation --

@dataclass(frozen=True)
class SegmentationParams:
    clip_len_s: float = 10.0
    stride_s: float = 5.0

    def __post_init__(self):
        if self.clip_len_s <= 0 or self.stride_s <= 0:
            raise TaskError("clip_len_s and stride_s must be > 0")
        if self.stride_s > self.clip_len_s:
            raise TaskError(f"stride {self.stride_s}s exceeds clip length {self.clip_len_s}s; windows must overlap")


@dataclass(frozen=True)
class ClipWindow:
    clip_id: str
    source_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0 or self.end_s <= self.start_s:
            raise TaskError(f"{self.clip_id}: bad window [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def segment(duration_s: float, params: SegmentationParams = SegmentationParams(),
            source_id: str = "video") -> list:
    """Overlapping fixed-length windows over ``[0, duration_s]``.

    Full windows start every ``stride_s``; if they stop short of the end, one
    more window is anchored to the end so the tail is always covered.
    """
    if not duration_s > 0:
        raise NonpositiveDuration(f"duration must be > 0, got {duration_s}")
    ell, s = params.clip_len_s, params.stride_s
    if duration_s <= ell:
        spans = [(0.0, float(duration_s))]
    else:
        n = math.floor((duration_s - ell) / s)
        spans = [(i * s, i * s + ell) for i in range(n + 1)]
        if spans[-1][1] < duration_s:
            spans.append((duration_s - ell, float(duration_s)))
    return [ClipWindow(f"{source_id}#{i:04d}", source_id, float(a), float(b)) for i, (a, b) in enumerate(spans)]


# -- preprocessing and captions --

@dataclass(frozen=True)
class PreprocessSpec:
    fps: int = 6
    frame_w: int = 224
    frame_h: int = 224
    max_caption_tokens: int = 23
    beam_size: int = 4

    def __post_init__(self):
        for k in ("fps", "frame_w", "frame_h", "max_caption_tokens", "beam_size"):
            if getattr(self, k) <= 0:
                raise TaskError(f"{k} must be positive")

    def input_shape(self) -> tuple:
        """(batch, channels, frames, width, height) of one encoder input."""
        return (1, 3, self.fps, self.frame_w, self.frame_h)


@dataclass(frozen=True)
class CaptionRecord:
    clip_id: str
    text: str
    token_count: int = -1

    def __post_init__(self):
        if self.token_count < 0:
            object.__setattr__(self, "token_count", len(self.text.split()))


def check_caption(rec: CaptionRecord, spec: PreprocessSpec = PreprocessSpec()) -> None:
    if rec.token_count > spec.max_caption_tokens:
        raise TaskError(f"{rec.clip_id}: {rec.token_count} tokens exceeds cap of {spec.max_caption_tokens}")


class CaptionProvider(Protocol):
    def __call__(self, clip: ClipWindow, spec: PreprocessSpec) -> str: ...


def stub_captioner(clip: ClipWindow, spec: PreprocessSpec = PreprocessSpec()) -> str:
    """Deterministic stand-in for the neural captioner."""
    return f"footage from {clip.source_id} between {clip.start_s:g} and {clip.end_s:g} seconds"


def caption_clip(clip: ClipWindow, provider: CaptionProvider = stub_captioner,
                 spec: PreprocessSpec = PreprocessSpec()) -> CaptionRecord:
    # the decoder stops at max_caption_tokens; mirror that for any provider
    tokens = provider(clip, spec).split()[: spec.max_caption_tokens]
    return CaptionRecord(clip.clip_id, " ".join(tokens), len(tokens))


# -- embeddings --

@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    @property
    def dims(self) -> int:
        return int(self.values.shape[0])


_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def token_bucket(token: str, dims: int = 256) -> int:
    # stable across processes, unlike hash()
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % dims


@dataclass(frozen=True)
class HashingEmbedder:
    """Hashed bag-of-words, L2-normalized. Stand-in for a sentence model."""

    dims: int = 256

    def __call__(self, text: str) -> EmbeddingVector:
        toks = tokenize(text)
        if not toks:
            raise EmptyText(f"no tokens in {text!r}")
        v = np.zeros(self.dims, dtype=np.float64)
        for t in toks:
            v[token_bucket(t, self.dims)] += 1.0
        return EmbeddingVector(v / np.linalg.norm(v))


DEFAULT_EMBEDDER = HashingEmbedder()


def embed_text(text: str, embedder: Callable[[str], EmbeddingVector] = DEFAULT_EMBEDDER) -> EmbeddingVector:
    if not text or not text.strip():
        raise EmptyText("empty text")
    return embedder(text)


def _arr(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def cosine(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ordering key rounds away last-ulp noise so scaling the prompt cannot reorder results
_SCORE_DECIMALS = 12


def rank_clips(prompt_vec, captions: Sequence, k: int) -> list:
    """Top ``min(k, n)`` (clip_id, score) by cosine, ties by ascending clip_id.

    ``captions`` is a sequence of (CaptionRecord, EmbeddingVector) pairs.
    """
    if k < 1:
        raise TaskError(f"k must be >= 1, got {k}")
    scored = [(rec.clip_id, cosine(prompt_vec, vec)) for rec, vec in captions]
    scored.sort(key=lambda t: (-round(t[1], _SCORE_DECIMALS), t[0]))
    return scored[:k]


def recall_at_k(ranked: Mapping, truth: Mapping, k: int) -> float:
    """Fraction of queries whose relevant id shows up in their top ``k``.

    ``ranked`` maps query -> ranked ids (or (id, score) pairs).
    """
    if k < 1:
        raise TaskError(f"k must be >= 1, got {k}")
    if not ranked:
        return 0.0
    hits = 0
    for q, lst in ranked.items():
        if q not in truth:
            raise MissingTruth(q)
        ids = [x[0] if isinstance(x, (tuple, list)) else x for x in lst[:k]]
        hits += truth[q] in ids
    return hits / len(ranked)


# -- catalogue, script, manifest --

@dataclass(frozen=True)
class CatalogueEntry:
    clip: ClipWindow
    caption: CaptionRecord

    @property
    def clip_id(self) -> str:
        return self.clip.clip_id


class ScriptOrder(str, enum.Enum):
    SIMILARITY = "similarity"
    TEMPORAL = "temporal"


SCRIPT_TEMPLATE = "Scene {n}: {text}."


def compose_script(topk: Sequence, catalogue: Mapping, policy=ScriptOrder.SIMILARITY,
                   generator: Optional[Callable] = None) -> tuple:
    """Order the selected clips and write one script line per clip.

    ``topk`` is rank_clips output; ``catalogue`` maps clip_id to a
    CatalogueEntry. ``generator``, if given, replaces the line template: it
    gets the ordered captions and must return one line per caption.
    Returns (script_lines, ordered ClipWindows).
    """
    if not topk:
        raise EmptySelection("no clips selected")
    policy = ScriptOrder(policy)
    ids = [x[0] if isinstance(x, (tuple, list)) else x for x in topk]
    if len(set(ids)) != len(ids):
        raise DuplicateClip("duplicate clip in selection")
    entries = [catalogue[i] for i in ids]
    if policy is ScriptOrder.TEMPORAL:
        entries.sort(key=lambda e: (e.clip.source_id, e.clip.start_s, e.clip.clip_id))
    caps = [e.caption for e in entries]
    if generator is None:
        lines = [SCRIPT_TEMPLATE.format(n=n, text=c.text.strip().rstrip(".")) for n, c in enumerate(caps, 1)]
    else:
        lines = list(generator(caps))
        if len(lines) != len(caps):
            raise LengthMismatch(f"generator returned {len(lines)} lines for {len(caps)} clips")
    return lines, [e.clip for e in entries]


@dataclass(frozen=True)
class ManifestClip:
    clip_id: str
    source_id: str
    start_s: float
    end_s: float


@dataclass(frozen=True)
class AssemblyManifest:
    prompt: str
    ordered_clips: tuple
    script_lines: tuple

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "clips": [
                {"clip_id": c.clip_id, "source_id": c.source_id, "start_s": c.start_s, "end_s": c.end_s,
                 "line": line}
                for c, line in zip(self.ordered_clips, self.script_lines)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "AssemblyManifest":
        try:
            clips = [ManifestClip(c["clip_id"], c["source_id"], float(c["start_s"]), float(c["end_s"]))
                     for c in d["clips"]]
            lines = [c["line"] for c in d["clips"]]
            return build_manifest(d["prompt"], clips, lines)
        except KeyError as e:
            raise TaskError(f"manifest missing field {e}") from None


def build_manifest(prompt: str, ordered_clips: Sequence, script_lines: Sequence) -> AssemblyManifest:
    if len(ordered_clips) != len(script_lines):
        raise LengthMismatch(f"{len(ordered_clips)} clips but {len(script_lines)} script lines")
    clips = tuple(
        c if isinstance(c, ManifestClip) else ManifestClip(c.clip_id, c.source_id, c.start_s, c.end_s)
        for c in ordered_clips
    )
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise DuplicateClip(f"duplicate clip ids in {ids}")
    return AssemblyManifest(prompt, clips, tuple(script_lines))


def write_manifest(m: AssemblyManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(m.dumps(), encoding="utf-8")
    return path


def read_manifest(path) -> AssemblyManifest:
    return AssemblyManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


CATALOGUE_COLUMNS = ("clip_id", "source_id", "start_s", "end_s", "caption")


def parse_catalogue(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(CATALOGUE_COLUMNS) <= set(reader.fieldnames):
        raise TaskError(f"catalogue needs columns {list(CATALOGUE_COLUMNS)}, got {reader.fieldnames}")
    out, seen = [], set()
    for i, r in enumerate(reader, start=2):
        try:
            clip = ClipWindow(r["clip_id"].strip(), r["source_id"].strip(), float(r["start_s"]), float(r["end_s"]))
        except (TypeError, ValueError) as e:
            raise TaskError(f"catalogue line {i}: {e}") from None
        if clip.clip_id in seen:
            raise DuplicateClip(f"catalogue line {i}: {clip.clip_id} repeated")
        seen.add(clip.clip_id)
        out.append(CatalogueEntry(clip, CaptionRecord(clip.clip_id, r["caption"].strip())))
    return out


def read_catalogue(path) -> list:
    return parse_catalogue(Path(path).read_text(encoding="utf-8"))


def write_catalogue(entries: Iterable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CATALOGUE_COLUMNS)
        for e in entries:
            w.writerow([e.clip.clip_id, e.clip.source_id, repr(e.clip.start_s), repr(e.clip.end_s), e.caption.text])
    return path


def read_ground_truth(path) -> dict:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"query", "clip_id"} <= set(reader.fieldnames):
            raise TaskError("ground truth needs columns query,clip_id")
        return {r["query"]: r["clip_id"].strip() for r in reader}


# -- end-to-end task flows --

def index_catalogue(entries: Sequence, embedder=DEFAULT_EMBEDDER) -> list:
    return [(e.caption, embed_text(e.caption.text, embedder)) for e in entries]


def assemble(entries: Sequence, prompt: str, k: int = 5, policy=ScriptOrder.SIMILARITY,
             embedder=DEFAULT_EMBEDDER, generator=None) -> AssemblyManifest:
    """Rank captions against ``prompt``, keep the top ``k``, script and package them."""
    if not entries:
        raise EmptySelection("empty catalogue")
    ranked = rank_clips(embed_text(prompt, embedder), index_catalogue(entries, embedder), k)
    by_id = {e.clip_id: e for e in entries}
    lines, clips = compose_script(ranked, by_id, policy, generator)
    return build_manifest(prompt, clips, lines)


def retrieve(entries: Sequence, queries: Iterable, k: int = 10, embedder=DEFAULT_EMBEDDER) -> dict:
    """Rank the catalogue for each query; returns query -> [(clip_id, score)]."""
    index = index_catalogue(entries, embedder)
    return {q: rank_clips(embed_text(q, embedder), index, k) for q in queries}
