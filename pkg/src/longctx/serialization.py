"""File formats: task triplets, checkpoints, reports, training logs.

Tasks use BEIR-style files so user-supplied datasets drop in unchanged:
queries.jsonl {"_id", "text"}, corpus.jsonl {"_id", "title", "text"}, and a
tab-separated qrels.tsv (query-id, doc-id, score) with a header row.

Checkpoints are a versioned binary dump: magic, header length, a canonical
JSON header (config, extension, tensor manifest), then raw little-endian
tensor bytes in manifest order. Saving a loaded checkpoint reproduces the
original file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import Model, ModelConfig, PosExtension
from .errors import ParseError, ValidationError
from .evaluation import EvalReport
from .synth import RetrievalTask

QUERIES_FILE = "queries.jsonl"
CORPUS_FILE = "corpus.jsonl"
QRELS_FILE = "qrels.tsv"
QRELS_HEADER = "query-id\tdoc-id\tscore"

_CKPT_MAGIC = b"LCX1"
_CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# retrieval task triplets


def write_task(task: RetrievalTask, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / QUERIES_FILE, "w", encoding="utf-8") as fh:
        for qid in sorted(task.queries):
            fh.write(json.dumps({"_id": qid, "text": task.queries[qid]},
                                ensure_ascii=False) + "\n")
    with open(out / CORPUS_FILE, "w", encoding="utf-8") as fh:
        for did in sorted(task.docs):
            fh.write(json.dumps({"_id": did, "title": "", "text": task.docs[did]},
                                ensure_ascii=False) + "\n")
    with open(out / QRELS_FILE, "w", encoding="utf-8") as fh:
        fh.write(QRELS_HEADER + "\n")
        for qid in sorted(task.qrels):
            for did in sorted(task.qrels[qid]):
                fh.write(f"{qid}\t{did}\t{task.qrels[qid][did]}\n")


def _read_jsonl(path: Path, required: tuple[str, ...]) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            for key in required:
                if key not in obj:
                    raise ParseError(f"{path}:{lineno}: missing field {key!r}")
            rows[str(obj["_id"])] = obj
    return rows


def _read_qrels(path: Path) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if lineno == 1 or not line.strip():
                continue  # header
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated columns")
            qid, did, score = parts
            try:
                rel = int(score)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer score {score!r}") from exc
            qrels.setdefault(qid, {})[did] = rel
    return qrels


def load_task(
    queries_path: str | Path,
    corpus_path: str | Path,
    qrels_path: str | Path,
    *,
    name: str = "task",
) -> RetrievalTask:
    """Parse and validate a task triplet; dangling ids abort with offenders listed."""
    queries = {qid: str(row["text"]) for qid, row in
               _read_jsonl(Path(queries_path), ("_id", "text")).items()}
    docs = {}
    for did, row in _read_jsonl(Path(corpus_path), ("_id", "text")).items():
        title = str(row.get("title", "") or "")
        text = str(row["text"])
        docs[did] = f"{title} {text}".strip() if title else text
    qrels = _read_qrels(Path(qrels_path))

    dangling = sorted(
        {q for q in qrels if q not in queries}
        | {d for rels in qrels.values() for d in rels if d not in docs}
    )
    if dangling:
        raise ValidationError(f"qrels reference unknown ids: {dangling[:10]}")
    task = RetrievalTask(name=name, queries=queries, docs=docs, qrels=qrels)
    task.validate()
    return task


def load_task_dir(task_dir: str | Path, *, name: str | None = None) -> RetrievalTask:
    d = Path(task_dir)
    return load_task(
        d / QUERIES_FILE, d / CORPUS_FILE, d / QRELS_FILE,
        name=name or d.name,
    )


def task_stats(task: RetrievalTask) -> dict:
    """Counts and mean word lengths, for comparison with published statistics."""
    q_words = [len(t.split()) for t in task.queries.values()]
    d_words = [len(t.split()) for t in task.docs.values()]
    return {
        "name": task.name,
        "n_queries": len(task.queries),
        "n_docs": len(task.docs),
        "mean_query_words": sum(q_words) / len(q_words) if q_words else 0.0,
        "mean_doc_words": sum(d_words) / len(d_words) if d_words else 0.0,
    }


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path: str | Path) -> None:
    names = sorted(model.params)
    tensors = [(name, model.params[name]) for name in names]
    if model.pos_frozen is not None:
        tensors.append(("__pos_frozen__", model.pos_frozen.astype(np.uint8)))
    header = {
        "format_version": _CKPT_VERSION,
        "tool_version": __version__,
        "config": dataclasses.asdict(model.config),
        "extension": None if model.extension is None else dataclasses.asdict(model.extension),
        "tensors": [
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
            for name, arr in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str | Path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, blob_len = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        pos_frozen = None
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
            if entry["name"] == "__pos_frozen__":
                pos_frozen = arr.astype(bool)
            else:
                params[entry["name"]] = arr
    config = ModelConfig(**header["config"])
    extension = None
    if header["extension"] is not None:
        extension = PosExtension(**header["extension"])
    return Model(config=config, params=params, pos_frozen=pos_frozen, extension=extension)


# ---------------------------------------------------------------------------
# reports and logs


def write_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_training_log(log: list[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tloss\n")
        for step, loss in log:
            fh.write(f"{step}\t{loss:.10g}\n")
