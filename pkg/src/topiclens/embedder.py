"""Sentence embeddings: remote service client with a persistent cache,
plus a deterministic offline hash embedder used for tests and dry runs.

The cache is content-addressed: one record per (text hash, model), appended
to a single data file with a JSON index sidecar, so a corpus never pays for
the same embedding twice.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

log = logging.getLogger(__name__)

API_KEY_ENV = "EMBED_API_KEY"

_DATA_MAGIC = b"TLEMBC1\n"
_RECORD_HEADER = struct.Struct("<32sHI")  # key, model length, dimension


class EmbeddingError(RuntimeError):
    pass


class EmbeddingProtocolError(EmbeddingError):
    """The service answered with a malformed or inconsistent payload."""


class EmbeddingServiceError(EmbeddingError):
    """The service stayed unreachable after the configured retries."""

    def __init__(self, message: str, completed_rows: int):
        super().__init__(f"{message} ({completed_rows} rows already embedded)")
        self.completed_rows = completed_rows


def hash_embed(text: str, d: int) -> np.ndarray:
    """Deterministic bag-of-n-grams embedding with signed feature hashing.

    Whitespace tokens and their bigrams are hashed into ``d`` buckets with a
    +/-1 sign drawn from the hash, then L2-normalized. Stable across runs and
    platforms (keyed on blake2b, not the interpreter's string hash).
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    tokens = text.split()
    if not tokens:
        raise ValueError("cannot embed empty text")
    grams = list(tokens)
    grams.extend(f"{a}\x1f{b}" for a, b in zip(tokens, tokens[1:]))
    vec = np.zeros(d)
    for gram in grams:
        h = int.from_bytes(
            hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big"
        )
        sign = 1.0 if h & 1 else -1.0
        vec[(h >> 1) % d] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # All grams cancelled; fall back to a single deterministic bucket.
        h = int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")
        vec[h % d] = 1.0
        norm = 1.0
    return vec / norm


def _cache_key(text: str, model: str) -> bytes:
    return hashlib.sha256(model.encode("utf-8") + b"\x00" + text.encode("utf-8")).digest()


class EmbeddingCache:
    """Append-only vector store keyed by (text hash, model).

    Records live in ``vectors.dat``; ``index.json`` maps hex keys to file
    offsets and is rebuilt by scanning if missing or stale. Vectors round-trip
    bitwise (stored as little-endian float32).
    """

    def __init__(self, cache_dir: str | Path):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.data_path = self.dir / "vectors.dat"
        self.index_path = self.dir / "index.json"
        self._lock = threading.Lock()
        if not self.data_path.exists():
            self.data_path.write_bytes(_DATA_MAGIC)
        self._index: dict[str, int] = self._load_index()

    def _load_index(self) -> dict[str, int]:
        size = self.data_path.stat().st_size
        if self.index_path.exists():
            try:
                raw = json.loads(self.index_path.read_text())
                if raw.get("data_size") == size:
                    return {k: int(v) for k, v in raw["offsets"].items()}
            except (ValueError, KeyError):
                log.warning("embedding cache index unreadable, rebuilding")
        return self._scan()

    def _scan(self) -> dict[str, int]:
        index: dict[str, int] = {}
        with self.data_path.open("rb") as fh:
            magic = fh.read(len(_DATA_MAGIC))
            if magic != _DATA_MAGIC:
                raise EmbeddingError(f"{self.data_path} is not an embedding cache file")
            while True:
                offset = fh.tell()
                header = fh.read(_RECORD_HEADER.size)
                if not header:
                    break
                if len(header) < _RECORD_HEADER.size:
                    log.warning("truncated cache record at %d, ignoring tail", offset)
                    break
                key, model_len, dim = _RECORD_HEADER.unpack(header)
                body = fh.read(model_len + 4 * dim)
                if len(body) < model_len + 4 * dim:
                    log.warning("truncated cache record at %d, ignoring tail", offset)
                    break
                index[key.hex()] = offset
        return index

    def flush_index(self) -> None:
        with self._lock:
            payload = {"data_size": self.data_path.stat().st_size, "offsets": self._index}
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True))
        tmp.replace(self.index_path)

    def __contains__(self, key: bytes) -> bool:
        return key.hex() in self._index

    def get(self, key: bytes) -> np.ndarray | None:
        offset = self._index.get(key.hex())
        if offset is None:
            return None
        with self.data_path.open("rb") as fh:
            fh.seek(offset)
            stored_key, model_len, dim = _RECORD_HEADER.unpack(fh.read(_RECORD_HEADER.size))
            fh.seek(model_len, os.SEEK_CUR)
            raw = fh.read(4 * dim)
        if stored_key != key:
            raise EmbeddingError("cache index out of sync with data file")
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def put(self, key: bytes, model: str, vector: np.ndarray) -> None:
        vec = np.ascontiguousarray(vector, dtype="<f4")
        model_b = model.encode("utf-8")
        record = _RECORD_HEADER.pack(key, len(model_b), vec.size) + model_b + vec.tobytes()
        with self._lock:
            if key.hex() in self._index:
                return
            with self.data_path.open("ab") as fh:
                offset = fh.tell()
                fh.write(record)
            self._index[key.hex()] = offset

    def __len__(self) -> int:
        return len(self._index)


@dataclass
class ServiceConfig:
    """Connection settings for a /v1/embeddings-compatible endpoint."""

    url: str
    model: str
    batch_size: int = 256
    max_retries: int = 4
    backoff: float = 0.5
    timeout: float = 60.0
    max_inflight: int = 4

    def endpoint(self) -> str:
        return self.url.rstrip("/") + "/v1/embeddings"


def _request_batch(config: ServiceConfig, batch: list[str], session: requests.Session) -> list[np.ndarray]:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    attempt = 0
    while True:
        try:
            resp = session.post(
                config.endpoint(),
                json={"model": config.model, "input": batch},
                headers=headers,
                timeout=config.timeout,
            )
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            if resp.status_code != 200:
                raise EmbeddingProtocolError(
                    f"embedding request rejected: HTTP {resp.status_code}: {resp.text[:200]}"
                )
            payload = resp.json()
        except (requests.RequestException, ValueError) as exc:
            attempt += 1
            if attempt > config.max_retries:
                raise EmbeddingError(f"service unreachable after {config.max_retries} retries: {exc}")
            delay = config.backoff * (2 ** (attempt - 1))
            log.warning("embedding request failed (%s), retry %d in %.2fs", exc, attempt, delay)
            time.sleep(delay)
            continue
        data = payload.get("data")
        if not isinstance(data, list) or len(data) != len(batch):
            got = len(data) if isinstance(data, list) else "no"
            raise EmbeddingProtocolError(
                f"service returned {got} vectors for a batch of {len(batch)}"
            )
        vectors: list[np.ndarray | None] = [None] * len(batch)
        for item in data:
            try:
                idx = int(item["index"])
                emb = np.asarray(item["embedding"], dtype=np.float32)
            except (KeyError, TypeError, ValueError) as exc:
                raise EmbeddingProtocolError(f"malformed embedding record: {exc}")
            if not 0 <= idx < len(batch) or vectors[idx] is not None:
                raise EmbeddingProtocolError(f"bad or repeated index {idx} in response")
            vectors[idx] = emb
        out = [v for v in vectors if v is not None]
        if len(out) != len(batch):
            raise EmbeddingProtocolError("response left batch positions unfilled")
        if any(not np.all(np.isfinite(v)) for v in out):
            raise EmbeddingProtocolError("service returned non-finite embedding values")
        return out


def embed_batch(
    texts: Sequence[str], config: ServiceConfig, cache: EmbeddingCache
) -> np.ndarray:
    """Embed texts through the service, row order preserved, cache-first.

    Every distinct text is fetched at most once ever; requests go out in
    batches of ``config.batch_size`` with up to ``config.max_inflight``
    concurrent. A failure after retries aborts with the number of rows that
    made it into the cache.
    """
    if not texts:
        raise ValueError("no texts to embed")
    if any(not t.strip() for t in texts):
        bad = next(i for i, t in enumerate(texts) if not t.strip())
        raise ValueError(f"text at position {bad} is empty")
    keys = [_cache_key(t, config.model) for t in texts]
    missing: dict[bytes, str] = {}
    for key, text in zip(keys, texts):
        if key not in cache and key not in missing:
            missing[key] = text
    if missing:
        items = list(missing.items())
        batches = [
            items[i : i + config.batch_size]
            for i in range(0, len(items), config.batch_size)
        ]
        completed = 0
        completed_lock = threading.Lock()
        session = requests.Session()

        def fetch(batch: list[tuple[bytes, str]]) -> None:
            nonlocal completed
            vectors = _request_batch(config, [t for _, t in batch], session)
            for (key, _), vec in zip(batch, vectors):
                cache.put(key, config.model, vec)
            with completed_lock:
                completed += len(batch)

        try:
            with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
                for future in [pool.submit(fetch, b) for b in batches]:
                    future.result()
        except EmbeddingProtocolError:
            cache.flush_index()
            raise
        except EmbeddingError as exc:
            cache.flush_index()
            raise EmbeddingServiceError(str(exc), completed) from exc
        cache.flush_index()
    rows = []
    dim = None
    for key in keys:
        vec = cache.get(key)
        if vec is None:
            raise EmbeddingError("vector missing from cache after fetch")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise EmbeddingProtocolError(
                f"inconsistent embedding dimensions: {vec.size} vs {dim}"
            )
        rows.append(vec)
    matrix = np.vstack(rows)
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingProtocolError("embedding matrix contains non-finite values")
    return matrix


def embed_offline(texts: Sequence[str], d: int) -> np.ndarray:
    """Deterministic offline embedding matrix (float32, rows match input order)."""
    if not texts:
        raise ValueError("no texts to embed")
    return np.vstack([hash_embed(t, d) for t in texts]).astype(np.float32)
