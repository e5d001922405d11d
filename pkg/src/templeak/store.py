"""Content-addressed image store, caches, and append-only run manifests.

Layout under the store root:

    objects/ab/cdef...      canonical PNG blobs, sha256-addressed
    runs/<run_id>/manifest.jsonl
    runs/<run_id>/report.json
    runs/<run_id>/findings.jsonl
    cache/gens/<key>.json   (provider, prompt, seed, steps, size) -> digest
    cache/embeds/...        masked-embedding vectors
    configs/<digest>.json   promoted sweep configs

Manifests are append-only JSONL with monotonically increasing sequence
numbers; replay reconstructs run state, dropping a truncated final line
(crash recovery) but refusing corruption anywhere else.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

SCHEMA_VERSION = 1


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    pass


class ManifestError(StoreError):
    pass


class CompletedRunError(StoreError):
    pass


def canonical_dumps(obj: Any) -> str:
    """Compact JSON with insertion-order keys; used everywhere a file must
    be byte-stable across identical runs."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj: Any) -> str:
    return sha256_hex(canonical_dumps(obj).encode("utf-8"))


def canonical_png(data: bytes) -> bytes:
    """Re-encode image bytes as a canonical PNG.

    Digests must not depend on provider encoder quirks (ancillary chunks,
    compression settings), so every stored image goes through one decoder
    and one encoder configuration.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise StoreError(f"undecodable image bytes: {exc}") from exc
    if img.mode not in ("RGB", "RGBA"):
        img = img.convert("RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}.{threading.get_ident()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass
class RunState:
    """Materialized view of one run manifest."""

    run_id: str
    config: dict | None = None
    config_digest: str | None = None
    status: str = "running"
    generations: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    detection: dict | None = None
    analyses: list[dict] = field(default_factory=list)
    findings: list[dict] = field(default_factory=list)
    verdicts: list[dict] = field(default_factory=list)
    promotions: list[dict] = field(default_factory=list)
    last_seq: int = 0

    def generation_keys(self) -> set[tuple[int, int]]:
        return {(g["prompt_index"], g["seed_index"]) for g in self.generations}

    def ordered_generations(self) -> list[dict]:
        return sorted(self.generations, key=lambda g: (g["prompt_index"], g["seed_index"]))

    def group_status(self, group_id: str) -> str:
        status = "suspected"
        for v in self.verdicts:
            if v["group_id"] == group_id:
                status = "confirmed" if v["decision"] in ("confirmed", "leakage_confirmed") else "rejected"
        return status

    def latest_verdicts(self, group_id: str) -> list[dict]:
        """Latest verdict per analyst for one group, in analyst order."""
        latest: dict[str, dict] = {}
        for v in self.verdicts:
            if v["group_id"] == group_id:
                latest[v["analyst"]] = v
        return [latest[a] for a in sorted(latest)]


class Store:
    """Single-node store. One process is the writer for any given run; image
    writes are atomic (temp + rename) so concurrent readers never see torn
    blobs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)
        (self.root / "cache" / "gens").mkdir(parents=True, exist_ok=True)
        (self.root / "cache" / "embeds").mkdir(parents=True, exist_ok=True)
        (self.root / "configs").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._status_cache: dict[str, str] = {}
        # Next-sequence cache per run: this process is the single writer of a
        # run, so one scan on first touch keeps appends O(1) afterwards.
        self._seq_cache: dict[str, int] = {}

    # ---------------------------------------------------------------- images

    def _object_path(self, digest: str) -> Path:
        return self.root / "objects" / digest[:2] / digest[2:]

    def put_image(self, data: bytes) -> str:
        png = canonical_png(data)
        digest = sha256_hex(png)
        path = self._object_path(digest)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, png)
        return digest

    def get_image(self, digest: str) -> bytes:
        path = self._object_path(digest)
        if not path.exists():
            raise NotFoundError(f"no object {digest}")
        return path.read_bytes()

    def has_image(self, digest: str) -> bool:
        return self._object_path(digest).exists()

    # ----------------------------------------------------------------- runs

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def manifest_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "manifest.jsonl"

    def report_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "report.json"

    def findings_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "findings.jsonl"

    def run_exists(self, run_id: str) -> bool:
        return self.manifest_path(run_id).exists()

    def list_runs(self) -> list[str]:
        runs_dir = self.root / "runs"
        return sorted(p.name for p in runs_dir.iterdir() if (p / "manifest.jsonl").exists())

    def _run_lock(self, run_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(run_id, threading.Lock())

    def create_run(self, run_id: str, config: dict) -> str:
        if self.run_exists(run_id):
            raise StoreError(f"run {run_id} already exists")
        self.run_dir(run_id).mkdir(parents=True, exist_ok=True)
        config_digest = digest_obj(config)
        self.append_event(
            run_id,
            {"kind": "run_created", "config_digest": config_digest, "config": config},
            _allow_create=True,
        )
        return run_id

    # Derived-stage events may attach after the sweep is sealed: detection and
    # triage happen on completed runs by design. The generation set itself is
    # immutable once the run is complete.
    _POST_COMPLETION_KINDS = frozenset(
        {"detection", "analysis", "finding", "verdict", "promotion"}
    )

    def append_event(self, run_id: str, event: dict, _allow_create: bool = False) -> int:
        """Durably append one event; returns its sequence number.

        The file is flushed and fsynced before returning so a crash can lose
        at most a partially written tail line.
        """
        path = self.manifest_path(run_id)
        if not path.exists() and not _allow_create:
            raise NotFoundError(f"no run {run_id}")
        with self._run_lock(run_id):
            status = self._status_cache.get(run_id)
            if status is None and path.exists():
                status = self.replay(run_id).status
                self._status_cache[run_id] = status
            if status == "complete" and event.get("kind") not in self._POST_COMPLETION_KINDS:
                raise CompletedRunError(f"run {run_id} is complete")
            seq = self._seq_cache.get(run_id)
            if seq is None:
                self._repair_tail(path)
                seq = self._tail_seq(path) + 1
            self._seq_cache[run_id] = seq + 1
            record = {"v": SCHEMA_VERSION, "seq": seq, "t": time.time()}
            record.update(event)
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(canonical_dumps(record) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            if event.get("kind") == "status":
                self._status_cache[run_id] = event["status"]
            elif seq == 1:
                self._status_cache[run_id] = "running"
            return seq

    def _repair_tail(self, path: Path) -> None:
        """Make the manifest appendable after a crash: a final line without a
        newline is either a complete record that lost its terminator (repair
        with a newline) or a torn write (truncate it)."""
        if not path.exists():
            return
        data = path.read_bytes()
        if not data or data.endswith(b"\n"):
            return
        tail_start = data.rfind(b"\n") + 1
        tail = data[tail_start:]
        try:
            json.loads(tail.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            with open(path, "r+b") as fh:
                fh.truncate(tail_start)
        else:
            with open(path, "ab") as fh:
                fh.write(b"\n")

    def _tail_seq(self, path: Path) -> int:
        if not path.exists():
            return 0
        last = 0
        for rec in self._iter_records(path):
            last = rec["seq"]
        return last

    def _iter_records(self, path: Path):
        """Yield parsed manifest records. A malformed final line is dropped
        (interrupted write); malformed interior lines are corruption."""
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
        for i, line in enumerate(lines):
            stripped = line.strip()
            if not stripped:
                if i == len(lines) - 1:
                    continue
                raise ManifestError(f"corrupt manifest record at sequence {i + 1}")
            try:
                rec = json.loads(stripped)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    continue  # truncated tail from a crash; replay resumes before it
                raise ManifestError(f"corrupt manifest record at sequence {i + 1}")
            yield rec

    def replay(self, run_id: str) -> RunState:
        path = self.manifest_path(run_id)
        if not path.exists():
            raise NotFoundError(f"no run {run_id}")
        state = RunState(run_id=run_id)
        for rec in self._iter_records(path):
            state.last_seq = rec["seq"]
            kind = rec.get("kind")
            if kind == "run_created":
                state.config = rec.get("config")
                state.config_digest = rec.get("config_digest")
            elif kind == "generation":
                if rec.get("status") == "failed":
                    state.failures.append(rec)
                else:
                    state.generations.append(rec)
            elif kind == "detection":
                state.detection = rec
            elif kind == "analysis":
                state.analyses.append(rec)
            elif kind == "finding":
                state.findings.append(rec["finding"])
            elif kind == "verdict":
                state.verdicts.append(rec)
            elif kind == "promotion":
                state.promotions.append(rec)
            elif kind == "status":
                state.status = rec["status"]
        return state

    # ----------------------------------------------------------------- views

    def write_report(self, run_id: str, report: dict) -> Path:
        path = self.report_path(run_id)
        _atomic_write(path, (canonical_dumps(report) + "\n").encode("utf-8"))
        return path

    def write_findings(self, run_id: str, findings: list[dict]) -> Path:
        path = self.findings_path(run_id)
        body = "".join(canonical_dumps(f) + "\n" for f in findings)
        _atomic_write(path, body.encode("utf-8"))
        return path

    # ------------------------------------------------------------ gen cache

    def _gen_cache_path(self, key: dict) -> Path:
        return self.root / "cache" / "gens" / (digest_obj(key) + ".json")

    def gen_cache_get(self, key: dict) -> dict | None:
        path = self._gen_cache_path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def gen_cache_put(self, key: dict, value: dict) -> None:
        _atomic_write(self._gen_cache_path(key), canonical_dumps(value).encode("utf-8"))

    # ---------------------------------------------------------- embed cache

    def _embed_cache_path(self, provider_id: str, image_digest: str, mask_digest: str) -> Path:
        name = digest_obj({"p": provider_id, "i": image_digest, "m": mask_digest})
        return self.root / "cache" / "embeds" / (name + ".npy")

    def embed_cache_get(self, provider_id: str, image_digest: str, mask_digest: str) -> np.ndarray | None:
        path = self._embed_cache_path(provider_id, image_digest, mask_digest)
        if not path.exists():
            return None
        return np.load(path)

    def embed_cache_put(
        self, provider_id: str, image_digest: str, mask_digest: str, vector: np.ndarray
    ) -> None:
        path = self._embed_cache_path(provider_id, image_digest, mask_digest)
        buf = io.BytesIO()
        np.save(buf, vector)
        _atomic_write(path, buf.getvalue())

    # -------------------------------------------------------------- configs

    def save_config(self, config: dict) -> tuple[str, Path]:
        digest = digest_obj(config)
        path = self.root / "configs" / (digest + ".json")
        _atomic_write(path, (canonical_dumps(config) + "\n").encode("utf-8"))
        return digest, path
