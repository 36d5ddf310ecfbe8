"""Frozen text encoders producing letter and impression embedding sequences.

Two backends share one interface: a transformer encoder (the published
base-uncased bidirectional checkpoint, final hidden states) and a
deterministic hash-based encoder for offline tests and desk-scale runs.
Letter sequences are always exactly 3 positions (start token, the letter,
end token); impression sequences are variable length, hard-truncated at
512 positions.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LETTER_SEQ_LEN = 3
MAX_IMPRESSION_SEQ_LEN = 512


@dataclass
class EmbeddingSequence:
    """L x D token embeddings with a validity mask. kind is 'letter' or 'impression'."""

    vectors: np.ndarray
    mask: np.ndarray
    kind: str

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.mask.shape != (self.vectors.shape[0],):
            raise ValueError("vectors must be (L, D) with a length-L mask")
        L = self.vectors.shape[0]
        if self.kind == "letter" and L != LETTER_SEQ_LEN:
            raise ValueError(f"letter sequences must have L={LETTER_SEQ_LEN}, got {L}")
        if self.kind == "impression" and not 1 <= L <= MAX_IMPRESSION_SEQ_LEN:
            raise ValueError(f"impression sequence length {L} outside [1, {MAX_IMPRESSION_SEQ_LEN}]")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ConditioningPair:
    """The dual condition: one letter sequence and one impression sequence."""

    letter: EmbeddingSequence
    impressions: EmbeddingSequence
    encoder_hash: str


class TextEncoder:
    """Interface: frozen, deterministic letter/impression embedding extraction."""

    dim: int
    checkpoint_hash: str
    spec: dict

    def embed_letter(self, k: str) -> EmbeddingSequence:
        raise NotImplementedError

    def embed_impressions(self, sentence: str) -> EmbeddingSequence:
        raise NotImplementedError

    def encode_pair(self, letter: str, sentence: str) -> ConditioningPair:
        return ConditioningPair(
            letter=self.embed_letter(letter),
            impressions=self.embed_impressions(sentence),
            encoder_hash=self.checkpoint_hash,
        )


def _check_letter(k: str) -> None:
    if len(k) != 1 or k not in string.ascii_uppercase:
        raise ValueError(f"letter must be a single capital A-Z, got {k!r}")


_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class HashTextEncoder(TextEncoder):
    """Deterministic pseudo-random token embeddings, no network or weights needed.

    Each token maps to a fixed unit-scale Gaussian vector seeded by a hash
    of (version, token). Not semantically meaningful, but stable, distinct
    per token, and dimension-configurable, which is all the offline tests
    and toy training runs require.
    """

    START, END = "[cls]", "[sep]"

    def __init__(self, dim: int = 32, version: str = "hash-v1"):
        self.dim = dim
        self.version = version
        self.checkpoint_hash = hashlib.sha256(f"{version}:d{dim}".encode()).hexdigest()[:16]
        self.spec = {"kind": "hash", "dim": dim, "version": version}
        self._vec_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._vec_cache.get(token)
        if vec is None:
            seed = int.from_bytes(
                hashlib.blake2b(f"{self.version}:{token}".encode(), digest_size=8).digest(), "little"
            )
            vec = np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)
            vec /= np.sqrt(self.dim)
            self._vec_cache[token] = vec
        return vec

    def _encode_tokens(self, tokens: list[str], kind: str) -> EmbeddingSequence:
        vecs = np.stack([self._token_vector(t) for t in tokens])
        return EmbeddingSequence(vectors=vecs, mask=np.ones(len(tokens), dtype=bool), kind=kind)

    def embed_letter(self, k: str) -> EmbeddingSequence:
        _check_letter(k)
        return self._encode_tokens([self.START, k.lower(), self.END], "letter")

    def embed_impressions(self, sentence: str) -> EmbeddingSequence:
        if not sentence:
            raise ValueError("impression sentence is empty")
        tokens = [self.START] + _TOKEN_RE.findall(sentence.lower()) + [self.END]
        tokens = tokens[:MAX_IMPRESSION_SEQ_LEN]
        return self._encode_tokens(tokens, "impression")


class BertTextEncoder(TextEncoder):
    """Final hidden states of a frozen pre-trained bidirectional encoder.

    Defaults to the published "google-bert/bert-base-uncased" checkpoint
    (D=768); any compatible local path works. Requires the transformers
    package and the checkpoint files.
    """

    def __init__(self, checkpoint: str = "google-bert/bert-base-uncased", device: str = "cpu"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        self.model = AutoModel.from_pretrained(checkpoint).to(device).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.dim = self.model.config.hidden_size
        self.checkpoint_hash = self._hash_weights()
        self.spec = {"kind": "bert", "checkpoint": checkpoint}

    def _hash_weights(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.model.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:16]

    def _encode(self, text: str, max_length: int, kind: str) -> EmbeddingSequence:
        torch = self._torch
        enc = self.tokenizer(
            text, max_length=max_length, truncation=True, return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            hidden = self.model(**enc).last_hidden_state[0]
        L = hidden.shape[0]
        return EmbeddingSequence(
            vectors=hidden.cpu().numpy().astype(np.float32),
            mask=np.ones(L, dtype=bool),
            kind=kind,
        )

    def embed_letter(self, k: str) -> EmbeddingSequence:
        _check_letter(k)
        return self._encode(k, LETTER_SEQ_LEN, "letter")

    def embed_impressions(self, sentence: str) -> EmbeddingSequence:
        if not sentence:
            raise ValueError("impression sentence is empty")
        return self._encode(sentence, MAX_IMPRESSION_SEQ_LEN, "impression")


class EmbeddingCache(TextEncoder):
    """Disk cache wrapping an encoder; frozen weights make entries constants.

    Layout: one raw little-endian float32 file per entry plus a JSON index
    mapping content keys to (file, shape). Concurrent reads are free; writes
    are serialized by a lock.
    """

    def __init__(self, encoder: TextEncoder, cache_dir):
        self.encoder = encoder
        self.dim = encoder.dim
        self.checkpoint_hash = encoder.checkpoint_hash
        self.spec = encoder.spec
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._index_path = self.cache_dir / "index.json"
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        if self._index_path.is_file():
            self._index = json.loads(self._index_path.read_text())

    def _key(self, kind: str, text: str) -> str:
        return hashlib.sha256(f"{self.checkpoint_hash}:{kind}:{text}".encode()).hexdigest()

    def _get_or_compute(self, kind: str, text: str, compute) -> EmbeddingSequence:
        key = self._key(kind, text)
        entry = self._index.get(key)
        if entry is not None:
            data = np.fromfile(self.cache_dir / entry["file"], dtype="<f4")
            vectors = data.reshape(entry["shape"])
            return EmbeddingSequence(
                vectors=vectors, mask=np.ones(entry["shape"][0], dtype=bool), kind=kind
            )
        seq = compute(text)
        with self._lock:
            fname = f"{key}.bin"
            seq.vectors.astype("<f4").tofile(self.cache_dir / fname)
            self._index[key] = {"file": fname, "shape": list(seq.vectors.shape)}
            self._index_path.write_text(json.dumps(self._index, sort_keys=True))
        return seq

    def embed_letter(self, k: str) -> EmbeddingSequence:
        _check_letter(k)
        return self._get_or_compute("letter", k, self.encoder.embed_letter)

    def embed_impressions(self, sentence: str) -> EmbeddingSequence:
        if not sentence:
            raise ValueError("impression sentence is empty")
        return self._get_or_compute("impression", sentence, self.encoder.embed_impressions)


def build_encoder(spec: dict, cache_dir=None) -> TextEncoder:
    """Instantiate an encoder from its serialized spec, optionally cached."""
    kind = spec.get("kind")
    if kind == "hash":
        enc: TextEncoder = HashTextEncoder(dim=spec.get("dim", 32), version=spec.get("version", "hash-v1"))
    elif kind == "bert":
        enc = BertTextEncoder(checkpoint=spec.get("checkpoint", "google-bert/bert-base-uncased"))
    else:
        raise ValueError(f"unknown encoder kind {kind!r}")
    if cache_dir is not None:
        enc = EmbeddingCache(enc, cache_dir)
    return enc


def pad_impression_batch(seqs: list[EmbeddingSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length sequences into (B, Lmax, D) plus a boolean mask."""
    Lmax = max(s.vectors.shape[0] for s in seqs)
    D = seqs[0].dim
    vectors = np.zeros((len(seqs), Lmax, D), dtype=np.float32)
    mask = np.zeros((len(seqs), Lmax), dtype=bool)
    for i, s in enumerate(seqs):
        L = s.vectors.shape[0]
        vectors[i, :L] = s.vectors
        mask[i, :L] = s.mask
    return vectors, mask
