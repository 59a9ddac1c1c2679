"""Versioned binary containers for pipeline artifacts.

One container format for every .bin artifact: an 8-byte magic, a JSON header
(kind, format version, metadata, array descriptors), then raw little-endian
array payloads. Headers are serialized with sorted keys so identical content
produces identical bytes.
"""
from __future__ import annotations

import json
import struct
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .corpus import Document, GroupedCorpus

MAGIC = b"TLNSART\x01"
_LEN = struct.Struct("<I")

__all__ = [
    "write_artifact",
    "read_artifact",
    "save_corpus",
    "load_corpus",
    "save_matrix",
    "load_matrix",
    "save_topics",
    "load_topics",
]


class ArtifactError(RuntimeError):
    pass


def _encode_strings(values: list[str]) -> tuple[np.ndarray, np.ndarray]:
    blobs = [v.encode("utf-8") for v in values]
    offsets = np.zeros(len(blobs) + 1, dtype="<i8")
    np.cumsum([len(b) for b in blobs], out=offsets[1:])
    data = np.frombuffer(b"".join(blobs), dtype=np.uint8).copy()
    return offsets, data


def _decode_strings(offsets: np.ndarray, data: np.ndarray) -> list[str]:
    raw = data.tobytes()
    return [
        raw[offsets[i] : offsets[i + 1]].decode("utf-8")
        for i in range(len(offsets) - 1)
    ]


def write_artifact(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    descriptors = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        descriptors.append({"name": name, "dtype": arr.dtype.str.replace(">", "<"), "shape": list(arr.shape)})
        payloads.append(le.tobytes())
    header = json.dumps(
        {"kind": kind, "format_version": 1, "meta": meta, "arrays": descriptors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for payload in payloads:
            fh.write(payload)
    tmp.replace(path)


def read_artifact(path: str | Path, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ArtifactError(f"{path}: not a topiclens artifact (bad magic)")
        (hlen,) = _LEN.unpack(fh.read(_LEN.size))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ArtifactError(f"{path}: unsupported format version {header.get('format_version')}")
        if expect_kind is not None and header["kind"] != expect_kind:
            raise ArtifactError(f"{path}: expected kind {expect_kind!r}, found {header['kind']!r}")
        arrays = {}
        for desc in header["arrays"]:
            dtype = np.dtype(desc["dtype"])
            count = int(np.prod(desc["shape"])) if desc["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ArtifactError(f"{path}: truncated array {desc['name']!r}")
            arrays[desc["name"]] = np.frombuffer(raw, dtype=dtype).reshape(desc["shape"]).copy()
    return header["meta"], arrays


# ---------------------------------------------------------------------------
# Corpus container


def save_corpus(path: str | Path, corpus: GroupedCorpus) -> None:
    docs = corpus.documents
    doc_off, doc_data = _encode_strings([d.doc_id for d in docs])
    usr_off, usr_data = _encode_strings([d.user_id for d in docs])
    txt_off, txt_data = _encode_strings([d.text for d in docs])
    ts = np.array([int(d.timestamp.timestamp()) for d in docs], dtype="<i8")
    rt = np.array([1 if d.is_retweet else 0 for d in docs], dtype=np.uint8)
    users = sorted(corpus.group_of)
    gu_off, gu_data = _encode_strings(users)
    groups = np.array([0 if corpus.group_of[u] == "E" else 1 for u in users], dtype=np.uint8)
    write_artifact(
        path,
        "corpus",
        {
            "threshold_date": corpus.threshold_date.isoformat(),
            "analysis_start": corpus.analysis_start.isoformat(),
            "n_documents": len(docs),
            "n_users": len(users),
        },
        {
            "doc_id_offsets": doc_off,
            "doc_id_data": doc_data,
            "user_id_offsets": usr_off,
            "user_id_data": usr_data,
            "text_offsets": txt_off,
            "text_data": txt_data,
            "timestamps": ts,
            "is_retweet": rt,
            "group_user_offsets": gu_off,
            "group_user_data": gu_data,
            "group_codes": groups,
        },
    )


def load_corpus(path: str | Path) -> GroupedCorpus:
    meta, arrays = read_artifact(path, expect_kind="corpus")
    doc_ids = _decode_strings(arrays["doc_id_offsets"], arrays["doc_id_data"])
    user_ids = _decode_strings(arrays["user_id_offsets"], arrays["user_id_data"])
    texts = _decode_strings(arrays["text_offsets"], arrays["text_data"])
    docs = [
        Document(
            doc_id=doc_ids[i],
            user_id=user_ids[i],
            timestamp=datetime.fromtimestamp(int(arrays["timestamps"][i]), tz=timezone.utc),
            text=texts[i],
            is_retweet=bool(arrays["is_retweet"][i]),
        )
        for i in range(len(doc_ids))
    ]
    users = _decode_strings(arrays["group_user_offsets"], arrays["group_user_data"])
    group_of = {
        u: ("E" if code == 0 else "L") for u, code in zip(users, arrays["group_codes"])
    }
    return GroupedCorpus(
        documents=docs,
        threshold_date=date.fromisoformat(meta["threshold_date"]),
        group_of=group_of,
        analysis_start=date.fromisoformat(meta["analysis_start"]),
    )


# ---------------------------------------------------------------------------
# Matrix containers (embeddings / reduced) and topic labels


def save_matrix(path: str | Path, kind: str, doc_ids: list[str], matrix: np.ndarray, meta: dict) -> None:
    off, data = _encode_strings(doc_ids)
    full_meta = dict(meta)
    full_meta["rows"] = int(matrix.shape[0])
    full_meta["dim"] = int(matrix.shape[1])
    write_artifact(
        path, kind, full_meta, {"doc_id_offsets": off, "doc_id_data": data, "matrix": matrix}
    )


def load_matrix(path: str | Path, kind: str) -> tuple[list[str], np.ndarray, dict]:
    meta, arrays = read_artifact(path, expect_kind=kind)
    doc_ids = _decode_strings(arrays["doc_id_offsets"], arrays["doc_id_data"])
    matrix = arrays["matrix"]
    if matrix.shape[0] != len(doc_ids):
        raise ArtifactError(f"{path}: row count does not match doc id list")
    if not np.all(np.isfinite(matrix)):
        raise ArtifactError(f"{path}: matrix contains non-finite values")
    return doc_ids, matrix, meta


def save_topics(
    path: str | Path,
    doc_ids: list[str],
    labels: np.ndarray,
    meta: dict,
    retained: list[int] | None = None,
) -> None:
    off, data = _encode_strings(doc_ids)
    full_meta = dict(meta)
    if retained is not None:
        full_meta["retained_topics"] = [int(t) for t in retained]
    write_artifact(
        path,
        "topics",
        full_meta,
        {
            "doc_id_offsets": off,
            "doc_id_data": data,
            "labels": np.asarray(labels, dtype="<i8"),
        },
    )


def load_topics(path: str | Path) -> tuple[list[str], np.ndarray, dict]:
    meta, arrays = read_artifact(path, expect_kind="topics")
    doc_ids = _decode_strings(arrays["doc_id_offsets"], arrays["doc_id_data"])
    return doc_ids, arrays["labels"], meta
