"""File-backed persistence: repositories, raw records, snapshots, API keys, jobs.

Snapshot file layout (version 1, little-endian)::

    header   struct "<8sHHQIIQQQQQ32s"
             magic        b"TSUGSNAP"
             version      u16 = 1
             repo_id_len  u16
             n_docs       u64
             n_source     u32
             n_target     u32
             n_pairs      u64
             source_off   u64  \\
             target_off   u64   } byte offsets into the payload
             pairs_off    u64  /
             payload_len  u64
             checksum     32 bytes, SHA-256 over header (checksum zeroed),
                          repo_id and payload
    repo_id  UTF-8, repo_id_len bytes
    payload  source table: n_source x (u32 byte length, UTF-8 term),
                           then u64 df[n_source]
             target table: same shape for targets
             pair table:   u32 source_pos[n_pairs], u32 target_pos[n_pairs],
                           u64 count[n_pairs], sorted by (source_pos, target_pos)

Terms in each table are in lexicographic order, so positions are stable.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import os
import secrets
import struct
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol

import numpy as np
from filelock import FileLock

from .engine import CooccurrenceIndex
from .harvester import EndpointConfig, RawRecord
from .metadata import FieldMapping
from .text import PipelineConfig

MAGIC = b"TSUGSNAP"
VERSION = 1
_HEADER = struct.Struct("<8sHHQIIQQQQQ32s")


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class SnapshotCorrupt(StoreError):
    pass


class Conflict(StoreError):
    pass


class InvalidTransition(StoreError):
    pass


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


# -- snapshot encoding -------------------------------------------------------


@dataclass(frozen=True, order=True)
class SnapshotId:
    repo_id: str
    seq: int

    def __str__(self):
        return f"{self.repo_id}@{self.seq:06d}"

    @classmethod
    def parse(cls, text: str) -> SnapshotId:
        repo_id, sep, seq = str(text).rpartition("@")
        if not sep or not repo_id or not seq.isdigit():
            raise ValueError(f"malformed snapshot id {text!r}")
        return cls(repo_id, int(seq))


def _encode_terms(terms, df) -> bytes:
    parts = []
    for t in terms:
        b = t.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    parts.append(np.asarray(df, dtype="<u8").tobytes())
    return b"".join(parts)


def encode_snapshot(repo_id: str, index: CooccurrenceIndex) -> bytes:
    src = _encode_terms(index.source_terms, index.source_df)
    tgt = _encode_terms(index.target_terms, index.target_df)
    pair_src = np.repeat(np.arange(len(index.source_terms)), np.diff(index.pair_indptr))
    pairs = b"".join((
        pair_src.astype("<u4").tobytes(),
        index.pair_target.astype("<u4").tobytes(),
        index.pair_count.astype("<u8").tobytes(),
    ))
    payload = src + tgt + pairs
    rid = repo_id.encode("utf-8")
    fields = [MAGIC, VERSION, len(rid), index.n_docs, len(index.source_terms), len(index.target_terms),
              index.n_pairs, 0, len(src), len(src) + len(tgt), len(payload)]
    digest = hashlib.sha256(_HEADER.pack(*fields, b"\0" * 32) + rid + payload).digest()
    return _HEADER.pack(*fields, digest) + rid + payload


def _decode_terms(buf: bytes, pos: int, n: int):
    terms = []
    for _ in range(n):
        (length,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        terms.append(buf[pos:pos + length].decode("utf-8"))
        pos += length
    df = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).astype(np.int64)
    return terms, df, pos + 8 * n


def decode_snapshot(data: bytes) -> tuple[str, CooccurrenceIndex]:
    if len(data) < _HEADER.size:
        raise SnapshotCorrupt("snapshot shorter than its header")
    (magic, version, rid_len, n_docs, n_src, n_tgt, n_pairs,
     src_off, tgt_off, pairs_off, payload_len, digest) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotCorrupt("bad magic")
    if version != VERSION:
        raise SnapshotCorrupt(f"unsupported snapshot version {version}")
    start = _HEADER.size + rid_len
    if len(data) != start + payload_len:
        raise SnapshotCorrupt(f"expected {start + payload_len} bytes, found {len(data)}")
    header = _HEADER.pack(magic, version, rid_len, n_docs, n_src, n_tgt, n_pairs,
                          src_off, tgt_off, pairs_off, payload_len, b"\0" * 32)
    if not hmac.compare_digest(hashlib.sha256(header + data[_HEADER.size:]).digest(), digest):
        raise SnapshotCorrupt("checksum mismatch")
    repo_id = data[_HEADER.size:start].decode("utf-8")
    payload = memoryview(data)[start:].tobytes()
    try:
        src_terms, src_df, end = _decode_terms(payload, src_off, n_src)
        if end != tgt_off:
            raise SnapshotCorrupt("source table length mismatch")
        tgt_terms, tgt_df, end = _decode_terms(payload, tgt_off, n_tgt)
        if end != pairs_off or pairs_off + 16 * n_pairs != payload_len:
            raise SnapshotCorrupt("table offsets inconsistent")
        p_src = np.frombuffer(payload, "<u4", n_pairs, pairs_off).astype(np.int64)
        p_tgt = np.frombuffer(payload, "<u4", n_pairs, pairs_off + 4 * n_pairs).astype(np.int64)
        p_cnt = np.frombuffer(payload, "<u8", n_pairs, pairs_off + 8 * n_pairs).astype(np.int64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise SnapshotCorrupt(f"unreadable payload: {exc}") from exc
    if n_pairs and (p_src.max() >= n_src or p_tgt.max() >= n_tgt):
        raise SnapshotCorrupt("pair table references unknown term")
    indptr = np.zeros(n_src + 1, np.int64)
    np.cumsum(np.bincount(p_src, minlength=n_src), out=indptr[1:])
    index = CooccurrenceIndex(n_docs, src_terms, src_df, tgt_terms, tgt_df, indptr, p_tgt, p_cnt)
    return repo_id, index


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True).encode("utf-8"))


# -- repositories ------------------------------------------------------------


class Status(str, enum.Enum):
    REGISTERED = "registered"
    SCHEDULED = "scheduled"
    HARVESTING = "harvesting"
    PROCESSING = "processing"
    PUBLISHED = "published"
    FAILED = "failed"


_TRANSITIONS = {
    Status.REGISTERED: {Status.SCHEDULED},
    Status.SCHEDULED: {Status.HARVESTING, Status.FAILED},
    Status.HARVESTING: {Status.PROCESSING, Status.FAILED},
    Status.PROCESSING: {Status.PUBLISHED, Status.FAILED},
    Status.PUBLISHED: {Status.SCHEDULED},
    Status.FAILED: {Status.SCHEDULED},
}


@dataclass(frozen=True)
class FileSource:
    paths: tuple[str, ...]

    def to_dict(self):
        return {"type": "files", "paths": list(self.paths)}


def source_from_dict(data: dict) -> EndpointConfig | FileSource:
    kind = data.get("type")
    if kind == "files":
        return FileSource(tuple(data["paths"]))
    if kind == "oai":
        return EndpointConfig.from_dict(data["endpoint"])
    raise ValueError(f"unknown source type {kind!r}")


def source_to_dict(source: EndpointConfig | FileSource) -> dict:
    if isinstance(source, FileSource):
        return source.to_dict()
    return {"type": "oai", "endpoint": source.to_dict()}


@dataclass(frozen=True)
class RepositoryRecord:
    repo_id: str
    name: str
    owner: str
    source: EndpointConfig | FileSource
    mapping: FieldMapping = field(default_factory=FieldMapping)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    status: Status = Status.REGISTERED
    published_snapshot: SnapshotId | None = None
    last_error: str | None = None
    public: bool = False
    created_at: datetime = field(default_factory=utcnow)

    def to_dict(self) -> dict:
        return {
            "repo_id": self.repo_id,
            "name": self.name,
            "owner": self.owner,
            "source": source_to_dict(self.source),
            "mapping": self.mapping.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "status": self.status.value,
            "published_snapshot": str(self.published_snapshot) if self.published_snapshot else None,
            "last_error": self.last_error,
            "public": self.public,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RepositoryRecord:
        return cls(
            repo_id=d["repo_id"],
            name=d["name"],
            owner=d["owner"],
            source=source_from_dict(d["source"]),
            mapping=FieldMapping.from_dict(d.get("mapping")),
            pipeline=PipelineConfig.from_dict(d.get("pipeline")),
            status=Status(d["status"]),
            published_snapshot=SnapshotId.parse(d["published_snapshot"]) if d.get("published_snapshot") else None,
            last_error=d.get("last_error"),
            public=bool(d.get("public", False)),
            created_at=datetime.fromisoformat(d["created_at"]),
        )


# -- api keys ----------------------------------------------------------------


@dataclass(frozen=True)
class ApiKey:
    key_id: str
    owner: str
    created_at: datetime
    revoked: bool = False


def _hash_secret(salt: bytes, secret: str) -> bytes:
    return hashlib.sha256(salt + secret.encode("utf-8")).digest()


class Storage(Protocol):
    """What the pipeline and service need from persistence."""

    def get_repository(self, repo_id: str) -> RepositoryRecord: ...
    def set_status(self, repo_id: str, status: Status, error: str | None = None) -> RepositoryRecord: ...
    def persist_snapshot(self, repo_id: str, index: CooccurrenceIndex) -> SnapshotId: ...
    def load_snapshot(self, sid: SnapshotId) -> CooccurrenceIndex: ...
    def publish(self, repo_id: str, sid: SnapshotId) -> None: ...
    def published(self, repo_id: str) -> tuple[SnapshotId, CooccurrenceIndex] | None: ...


class FileStore:
    """Directory-backed :class:`Storage`.

    Layout under ``root``::

        keys.json
        repos/<repo_id>/repo.json        status + published snapshot pointer
        repos/<repo_id>/records.jsonl    retained raw records
        repos/<repo_id>/snapshots/<seq>.snap
        jobs/<job_id>.json

    Every file is replaced atomically. Publishing rewrites ``repo.json`` in
    one ``os.replace`` and swaps the in-memory serving entry, so a reader sees
    either the old or the new snapshot, never a mix.
    """

    def __init__(self, root: str | Path, retain_records: bool = True):
        self.root = Path(root)
        self.retain_records = retain_records
        (self.root / "repos").mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._flock = FileLock(str(self.root / ".lock"))
        # repo_id -> (repo.json mtime_ns, SnapshotId, index)
        self._serving: dict[str, tuple[int, SnapshotId, CooccurrenceIndex]] = {}
        self._snap_cache: dict[SnapshotId, CooccurrenceIndex] = {}

    def _write_lock(self):
        return _Both(self._lock, self._flock)

    # repositories

    def _repo_dir(self, repo_id: str) -> Path:
        if not repo_id or "/" in repo_id or repo_id.startswith("."):
            raise NotFound(f"unknown repository {repo_id!r}")
        return self.root / "repos" / repo_id

    def create_repository(self, name: str, owner: str, source, mapping: FieldMapping | None = None,
                          pipeline: PipelineConfig | None = None, public: bool = False) -> RepositoryRecord:
        with self._write_lock():
            if any(r.name == name and r.owner == owner for r in self.list_repositories()):
                raise Conflict(f"repository {name!r} already exists for {owner!r}")
            rec = RepositoryRecord(
                repo_id="r" + uuid.uuid4().hex[:12], name=name, owner=owner, source=source,
                mapping=mapping or FieldMapping(), pipeline=pipeline or PipelineConfig(), public=public,
            )
            d = self._repo_dir(rec.repo_id)
            (d / "snapshots").mkdir(parents=True)
            _write_json(d / "repo.json", rec.to_dict())
            return rec

    def get_repository(self, repo_id: str) -> RepositoryRecord:
        path = self._repo_dir(repo_id) / "repo.json"
        try:
            return RepositoryRecord.from_dict(json.loads(path.read_text("utf-8")))
        except FileNotFoundError:
            raise NotFound(f"unknown repository {repo_id!r}") from None

    def list_repositories(self, owner: str | None = None) -> list[RepositoryRecord]:
        out = []
        for d in sorted((self.root / "repos").iterdir()):
            if (d / "repo.json").exists():
                rec = self.get_repository(d.name)
                if owner is None or rec.owner == owner:
                    out.append(rec)
        return out

    def find_repository(self, ref: str, owner: str | None = None) -> RepositoryRecord:
        """Look up by repo_id, falling back to name (optionally per owner)."""
        try:
            return self.get_repository(ref)
        except NotFound:
            pass
        matches = [r for r in self.list_repositories(owner) if r.name == ref]
        if len(matches) == 1:
            return matches[0]
        if matches:
            raise Conflict(f"repository name {ref!r} is ambiguous; use the id")
        raise NotFound(f"unknown repository {ref!r}")

    def _save_repository(self, rec: RepositoryRecord) -> None:
        _write_json(self._repo_dir(rec.repo_id) / "repo.json", rec.to_dict())

    def set_status(self, repo_id: str, status: Status, error: str | None = None) -> RepositoryRecord:
        with self._write_lock():
            rec = self.get_repository(repo_id)
            status = Status(status)
            if status not in _TRANSITIONS[rec.status]:
                raise InvalidTransition(f"{rec.status.value} -> {status.value}")
            if status is Status.PUBLISHED and rec.published_snapshot is None:
                raise InvalidTransition("cannot mark published without a snapshot")
            rec = replace(rec, status=status, last_error=error if status is Status.FAILED else rec.last_error)
            self._save_repository(rec)
            return rec

    def update_repository(self, repo_id: str, **changes) -> RepositoryRecord:
        with self._write_lock():
            rec = replace(self.get_repository(repo_id), **changes)
            self._save_repository(rec)
            return rec

    # raw records

    def save_records(self, repo_id: str, records) -> int:
        path = self._repo_dir(repo_id) / "records.jsonl"
        tmp = path.with_suffix(".jsonl.tmp")
        n = 0
        with open(tmp, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
                n += 1
        os.replace(tmp, path)
        return n

    def load_records(self, repo_id: str):
        path = self._repo_dir(repo_id) / "records.jsonl"
        if not path.exists():
            raise NotFound(f"no retained records for {repo_id!r}")
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield RawRecord.from_dict(json.loads(line))

    # snapshots

    def _snap_path(self, sid: SnapshotId) -> Path:
        return self._repo_dir(sid.repo_id) / "snapshots" / f"{sid.seq:06d}.snap"

    def list_snapshots(self, repo_id: str) -> list[SnapshotId]:
        d = self._repo_dir(repo_id) / "snapshots"
        if not d.exists():
            raise NotFound(f"unknown repository {repo_id!r}")
        return sorted(SnapshotId(repo_id, int(p.stem)) for p in d.glob("*.snap"))

    def persist_snapshot(self, repo_id: str, index: CooccurrenceIndex) -> SnapshotId:
        data = encode_snapshot(repo_id, index)
        with self._write_lock():
            existing = self.list_snapshots(repo_id)
            sid = SnapshotId(repo_id, existing[-1].seq + 1 if existing else 1)
            try:
                _atomic_write(self._snap_path(sid), data)
            except OSError as exc:
                raise StoreError(f"could not write snapshot {sid}: {exc}") from exc
        self._snap_cache[sid] = index
        return sid

    def load_snapshot(self, sid: SnapshotId | str) -> CooccurrenceIndex:
        if not isinstance(sid, SnapshotId):
            sid = SnapshotId.parse(sid)
        try:
            data = self._snap_path(sid).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"unknown snapshot {sid}") from None
        repo_id, index = decode_snapshot(data)
        if repo_id != sid.repo_id:
            raise SnapshotCorrupt(f"snapshot {sid} belongs to {repo_id!r}")
        return index

    def publish(self, repo_id: str, sid: SnapshotId) -> None:
        if sid.repo_id != repo_id:
            raise Conflict(f"snapshot {sid} does not belong to repository {repo_id}")
        index = self._snap_cache.pop(sid, None) or self.load_snapshot(sid)
        with self._write_lock():
            rec = self.get_repository(repo_id)
            status = rec.status
            if status is Status.PROCESSING or status is Status.REGISTERED:
                status = Status.PUBLISHED
            rec = replace(rec, published_snapshot=sid, status=status)
            path = self._repo_dir(repo_id) / "repo.json"
            _write_json(path, rec.to_dict())
            self._serving[repo_id] = (path.stat().st_mtime_ns, sid, index)

    def published(self, repo_id: str) -> tuple[SnapshotId, CooccurrenceIndex] | None:
        """The currently served snapshot, reloaded if another process published."""
        entry = self._serving.get(repo_id)
        path = self._repo_dir(repo_id) / "repo.json"
        try:
            mtime = path.stat().st_mtime_ns
        except FileNotFoundError:
            raise NotFound(f"unknown repository {repo_id!r}") from None
        if entry is not None and entry[0] == mtime:
            return entry[1], entry[2]
        with self._lock:
            entry = self._serving.get(repo_id)
            mtime = path.stat().st_mtime_ns
            if entry is not None and entry[0] == mtime:
                return entry[1], entry[2]
            rec = self.get_repository(repo_id)
            if rec.published_snapshot is None:
                return None
            if entry is not None and entry[1] == rec.published_snapshot:
                index = entry[2]
            else:
                index = self.load_snapshot(rec.published_snapshot)
            self._serving[repo_id] = (mtime, rec.published_snapshot, index)
            return rec.published_snapshot, index

    # api keys

    def _keys_path(self) -> Path:
        return self.root / "keys.json"

    def _read_keys(self) -> dict:
        try:
            return json.loads(self._keys_path().read_text("utf-8"))
        except FileNotFoundError:
            return {}

    def issue_key(self, owner: str) -> tuple[str, ApiKey]:
        """Create a key for ``owner``. The plaintext is returned here only."""
        key_id = secrets.token_hex(8)
        secret = secrets.token_urlsafe(32)
        salt = secrets.token_bytes(16)
        now = utcnow()
        with self._write_lock():
            keys = self._read_keys()
            keys[key_id] = {
                "owner": owner,
                "salt": salt.hex(),
                "hash": _hash_secret(salt, secret).hex(),
                "created_at": now.isoformat(),
                "revoked": False,
            }
            _write_json(self._keys_path(), keys)
        return f"{key_id}.{secret}", ApiKey(key_id, owner, now)

    def revoke_key(self, key_id: str) -> None:
        key_id = key_id.split(".", 1)[0]
        with self._write_lock():
            keys = self._read_keys()
            if key_id not in keys:
                raise NotFound(f"unknown key {key_id!r}")
            keys[key_id]["revoked"] = True
            _write_json(self._keys_path(), keys)

    def list_keys(self) -> list[ApiKey]:
        return [
            ApiKey(kid, v["owner"], datetime.fromisoformat(v["created_at"]), v["revoked"])
            for kid, v in sorted(self._read_keys().items())
        ]

    def authenticate(self, presented: str | None) -> ApiKey | None:
        if not presented:
            return None
        key_id, _, secret = presented.partition(".")
        entry = self._read_keys().get(key_id)
        salt = bytes.fromhex(entry["salt"]) if entry else b"\0" * 16
        expected = bytes.fromhex(entry["hash"]) if entry else b"\0" * 32
        ok = hmac.compare_digest(_hash_secret(salt, secret), expected)
        if not ok or entry is None or entry["revoked"]:
            return None
        return ApiKey(key_id, entry["owner"], datetime.fromisoformat(entry["created_at"]), False)

    # jobs

    def save_job(self, job: dict) -> None:
        _write_json(self.root / "jobs" / f"{job['job_id']}.json", job)

    def load_job(self, job_id: str) -> dict:
        if not job_id or "/" in job_id or job_id.startswith("."):
            raise NotFound(f"unknown job {job_id!r}")
        try:
            return json.loads((self.root / "jobs" / f"{job_id}.json").read_text("utf-8"))
        except FileNotFoundError:
            raise NotFound(f"unknown job {job_id!r}") from None

    def list_jobs(self, repo_id: str | None = None) -> list[dict]:
        jobs = [json.loads(p.read_text("utf-8")) for p in (self.root / "jobs").glob("*.json")]
        if repo_id is not None:
            jobs = [j for j in jobs if j["repo_id"] == repo_id]
        return sorted(jobs, key=lambda j: j["created_at"])


class _Both:
    """Enter a thread lock and a cross-process file lock together."""

    def __init__(self, tlock, flock):
        self.tlock, self.flock = tlock, flock

    def __enter__(self):
        self.tlock.acquire()
        try:
            self.flock.acquire()
        except BaseException:
            self.tlock.release()
            raise
        return self

    def __exit__(self, *exc):
        self.flock.release()
        self.tlock.release()
