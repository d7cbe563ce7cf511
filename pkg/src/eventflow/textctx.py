"""Category texts to content embeddings.

Two frozen base encoders are available: a signed hashing bag of word 1- and
2-grams, and a lookup into precomputed vectors (``embeddings.jsonl``).  A
linear adapter ``C = C_raw @ W + b`` on top is the trainable part; freezing it
gives the frozen-encoder ablation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from eventflow.numerics import DimensionError, Tensor, add, matmul, tensor

CATEGORY_KEYS = ("event_info", "public_reactions", "traffic_conditions")
K = len(CATEGORY_KEYS)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TOKEN = re.compile(r"[#\w][\w'&-]*")


class MissingEmbeddingError(KeyError):
    pass


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class TextContext:
    event_id: str
    category_texts: dict[str, str]
    C: np.ndarray | None = None

    def __post_init__(self):
        missing = [k for k in CATEGORY_KEYS if k not in self.category_texts]
        extra = [k for k in self.category_texts if k not in CATEGORY_KEYS]
        if missing or extra:
            raise ValueError(
                f"text context {self.event_id}: expected keys {CATEGORY_KEYS}, missing {missing}, unexpected {extra}"
            )

    def to_json(self) -> dict:
        return {"event_id": self.event_id, **{k: self.category_texts[k] for k in CATEGORY_KEYS}}

    @classmethod
    def from_json(cls, obj: dict) -> "TextContext":
        return cls(str(obj["event_id"]), {k: str(obj.get(k, "")) for k in CATEGORY_KEYS})


@dataclass
class EncoderSpec:
    kind: str = "hash_ngram"
    d_h: int = 32
    adapter_enabled: bool = True
    adapter_trainable: bool = True
    max_ngram: int = 2
    adapter_W: Tensor | None = None
    adapter_b: Tensor | None = None
    vectors: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("hash_ngram", "file_backed"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.d_h < 4:
            raise ValueError("d_h must be at least 4")
        if self.max_ngram not in (1, 2):
            raise ValueError("max_ngram must be 1 or 2")
        if self.adapter_W is None:
            self.adapter_W = tensor(np.eye(self.d_h), name="adapter_W")
        if self.adapter_b is None:
            self.adapter_b = tensor(np.zeros(self.d_h), name="adapter_b")
        for key, vec in self.vectors.items():
            if np.shape(vec) != (self.d_h,):
                raise DimensionError(f"embedding {key} has shape {np.shape(vec)}, expected ({self.d_h},)")
        self.set_trainable(self.adapter_trainable)

    def set_trainable(self, flag: bool) -> None:
        self.adapter_trainable = flag
        self.adapter_W.requires_grad = flag and self.adapter_enabled
        self.adapter_b.requires_grad = flag and self.adapter_enabled

    def load_vectors(self, path: str | Path) -> None:
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                vec = np.asarray(obj["vector"], dtype=np.float64)
                if vec.shape != (self.d_h,):
                    raise DimensionError(
                        f"embedding for ({obj['event_id']}, {obj['category']}) has length {vec.size}, expected {self.d_h}"
                    )
                self.vectors[(str(obj["event_id"]), str(obj["category"]))] = vec


def hash_embed(text: str, d_h: int, max_ngram: int = 2) -> np.ndarray:
    """Signed hashing bag of n-grams, L2-normalised (zero vector for no tokens)."""
    toks = tokenize(text)
    grams = list(toks)
    if max_ngram >= 2:
        grams += [f"{a} {b}" for a, b in zip(toks, toks[1:])]
    v = np.zeros(d_h)
    for g in grams:
        h = fnv1a64(g)
        v[h % d_h] += -1.0 if h >> 63 else 1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def encode_raw(ctx: TextContext, spec: EncoderSpec) -> np.ndarray:
    """Frozen base embedding of the K category texts, shape (K, d_h)."""
    rows = []
    for key in CATEGORY_KEYS:
        if spec.kind == "hash_ngram":
            rows.append(hash_embed(ctx.category_texts[key], spec.d_h, spec.max_ngram))
        else:
            try:
                rows.append(spec.vectors[(ctx.event_id, key)])
            except KeyError:
                raise MissingEmbeddingError(f"no embedding for ({ctx.event_id!r}, {key!r})") from None
    return np.vstack(rows)


def adapter_forward(C_raw, spec: EncoderSpec) -> Tensor:
    """``C_raw @ W + b`` on the tape (identity when the adapter is disabled)."""
    C_raw = C_raw if isinstance(C_raw, Tensor) else tensor(C_raw)
    if C_raw.shape[-1] != spec.d_h:
        raise DimensionError(f"adapter expects width {spec.d_h}, got {C_raw.shape}")
    if not spec.adapter_enabled:
        return C_raw
    return add(matmul(C_raw, spec.adapter_W), spec.adapter_b)


def encode_categories(ctx: TextContext, spec: EncoderSpec) -> np.ndarray:
    """Content embedding matrix C (K, d_h); stored on ``ctx.C`` as well."""
    C = adapter_forward(encode_raw(ctx, spec), spec).data.copy()
    ctx.C = C
    return C
