"""Job scheduling: harvest -> parse -> extract -> build -> persist -> publish."""

from __future__ import annotations

import enum
import logging
import threading
import time
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime

from .engine import build_index
from .harvester import EndpointConfig, HarvestError, Harvester, ingest_files
from .metadata import MetadataError, parse_oai_dc, select_fields
from .store import Conflict, FileSource, FileStore, NotFound, Status, utcnow

logger = logging.getLogger(__name__)


class Stage(str, enum.Enum):
    QUEUED = "queued"
    HARVESTING = "harvesting"
    PROCESSING = "processing"
    PERSISTING = "persisting"
    DONE = "done"
    FAILED = "failed"


ACTIVE_STAGES = {Stage.QUEUED, Stage.HARVESTING, Stage.PROCESSING, Stage.PERSISTING}


class JobActive(Conflict):
    pass


class JobTimeout(Exception):
    pass


@dataclass
class Job:
    job_id: str
    repo_id: str
    created_at: datetime = field(default_factory=utcnow)
    started_at: datetime | None = None
    finished_at: datetime | None = None
    stage: Stage = Stage.QUEUED
    records_harvested: int = 0
    records_processed: int = 0
    parse_failures: int = 0
    snapshot: str | None = None
    error: str | None = None
    files: list[str] | None = None

    @property
    def active(self) -> bool:
        return self.stage in ACTIVE_STAGES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.value
        for k in ("created_at", "started_at", "finished_at"):
            d[k] = d[k].isoformat() if d[k] else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Job:
        d = dict(d)
        d["stage"] = Stage(d["stage"])
        for k in ("created_at", "started_at", "finished_at"):
            d[k] = datetime.fromisoformat(d[k]) if d.get(k) else None
        return cls(**d)


@dataclass
class JobResult:
    job: Job
    ok: bool


class Scheduler:
    """Queues jobs and runs them on a bounded worker pool.

    All lifecycle transitions happen under one lock. With ``autostart`` off,
    :meth:`schedule` only queues; call :meth:`run_job` or :meth:`drain` to
    execute.
    """

    def __init__(self, store: FileStore, workers: int = 2, autostart: bool = True,
                 job_timeout: float | None = None, harvester_factory=Harvester):
        self.store = store
        self.workers = workers
        self.autostart = autostart
        self.job_timeout = job_timeout
        self.harvester_factory = harvester_factory
        self._lock = threading.RLock()
        self._jobs: dict[str, Job] = {}
        self._futures: dict[str, Future] = {}
        self._pool: ThreadPoolExecutor | None = None

    def _executor(self) -> ThreadPoolExecutor:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="termsuggest-job")
        return self._pool

    def shutdown(self, wait: bool = True) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=wait)
            self._pool = None

    def _save(self, job: Job) -> None:
        self.store.save_job(job.to_dict())

    def _active_job(self, repo_id: str) -> Job | None:
        for job in self._jobs.values():
            if job.repo_id == repo_id and job.active:
                return job
        for d in self.store.list_jobs(repo_id):
            if Stage(d["stage"]) in ACTIVE_STAGES:
                return Job.from_dict(d)
        return None

    def schedule(self, repo_id: str, files: list[str] | None = None) -> Job:
        """Queue a job. ``files`` replaces the repository source for this run only."""
        with self._lock, self.store._write_lock():
            self.store.get_repository(repo_id)
            active = self._active_job(repo_id)
            if active is not None:
                raise JobActive(f"job already active for repository {repo_id}: {active.job_id}")
            self.store.set_status(repo_id, Status.SCHEDULED)
            job = Job(job_id="j" + uuid.uuid4().hex[:12], repo_id=repo_id,
                      files=[str(f) for f in files] if files is not None else None)
            self._jobs[job.job_id] = job
            self._save(job)
        if self.autostart:
            self._futures[job.job_id] = self._executor().submit(self.run_job, job)
        return job

    def job_status(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is not None:
                return Job(**{**job.__dict__})
        return Job.from_dict(self.store.load_job(job_id))

    def wait(self, job_id: str, timeout: float | None = None) -> Job:
        fut = self._futures.get(job_id)
        if fut is not None:
            fut.result(timeout)
        return self.job_status(job_id)

    def pending(self) -> list[Job]:
        """Queued jobs recorded in the store but not owned by this scheduler."""
        with self._lock:
            return [Job.from_dict(d) for d in self.store.list_jobs()
                    if d["stage"] == Stage.QUEUED.value and d["job_id"] not in self._futures]

    def drain(self) -> list[JobResult]:
        """Run every queued job in the store to completion, in this thread."""
        return [self.run_job(job) for job in self.pending()]

    def resume_pending(self) -> None:
        for job in self.pending():
            self._jobs[job.job_id] = job
            self._futures[job.job_id] = self._executor().submit(self.run_job, job)

    def _advance(self, job: Job, **changes) -> None:
        with self._lock:
            for k, v in changes.items():
                setattr(job, k, v)
            self._save(job)

    def _progress(self, job: Job, deadline: float | None):
        def update(harvested: int) -> None:
            with self._lock:
                job.records_harvested = max(job.records_harvested, harvested)
            if deadline is not None and time.monotonic() > deadline:
                raise JobTimeout(f"job exceeded {self.job_timeout}s")
        return update

    def run_job(self, job: Job) -> JobResult:
        with self._lock:
            self._jobs[job.job_id] = job
            if job.stage is not Stage.QUEUED:
                raise ValueError(f"job {job.job_id} is {job.stage.value}, not queued")
        deadline = time.monotonic() + self.job_timeout if self.job_timeout else None
        progress = self._progress(job, deadline)
        repo = self.store.get_repository(job.repo_id)
        self._advance(job, started_at=utcnow(), stage=Stage.HARVESTING)
        phase = "harvest"
        try:
            self.store.set_status(repo.repo_id, Status.HARVESTING)
            source = FileSource(tuple(job.files)) if job.files is not None else repo.source
            records, failures = self._harvest(repo.repo_id, source, progress)
            if self.store.retain_records:
                self.store.save_records(repo.repo_id, records)
            # counters only grow: duplicates resolved above never lower the fetched count
            self._advance(job, records_harvested=max(job.records_harvested, len(records)),
                          parse_failures=failures)

            phase = "processing"
            self._advance(job, stage=Stage.PROCESSING)
            self.store.set_status(repo.repo_id, Status.PROCESSING)
            index = build_index(self._extractions(repo, records, job, deadline), repo.pipeline)

            phase = "persist"
            self._advance(job, stage=Stage.PERSISTING)
            sid = self.store.persist_snapshot(repo.repo_id, index)
            self.store.publish(repo.repo_id, sid)
        except Exception as exc:
            msg = f"{phase} failed: {exc}"
            logger.error("job %s: %s", job.job_id, msg)
            self._advance(job, stage=Stage.FAILED, error=msg, finished_at=utcnow())
            try:
                self.store.set_status(repo.repo_id, Status.FAILED, error=msg)
            except Exception:  # noqa: BLE001 - already failing; keep the first error
                logger.exception("could not mark repository %s failed", repo.repo_id)
            return JobResult(job, False)
        self._advance(job, stage=Stage.DONE, snapshot=str(sid), finished_at=utcnow())
        return JobResult(job, True)

    def _harvest(self, repo_id: str, source, progress) -> tuple[list, int]:
        if isinstance(source, FileSource):
            ingest = ingest_files(source.paths)
            latest = {}
            for rec in ingest:
                prev = latest.get(rec.identifier)
                if prev is None or rec.datestamp >= prev.datestamp:
                    latest[rec.identifier] = rec
                progress(len(latest))
            records = list(latest.values())
            if ingest.failures and not records:
                raise HarvestError(f"all {ingest.failure_count} files failed to parse")
            return records, ingest.failure_count
        if not isinstance(source, EndpointConfig):
            raise NotFound(f"repository {repo_id} has no usable source")
        harvester = self.harvester_factory(source)
        return list(harvester.harvest_all(progress=progress)), 0

    def _extractions(self, repo, records, job: Job, deadline):
        for i, raw in enumerate(records, 1):
            if raw.deleted:
                continue
            try:
                dc = parse_oai_dc(raw)
            except MetadataError as exc:
                logger.warning("skipping %s: %s", raw.identifier, exc)
                with self._lock:
                    job.parse_failures += 1
                continue
            yield select_fields(dc, repo.mapping)
            if i % 1000 == 0:
                if deadline is not None and time.monotonic() > deadline:
                    raise JobTimeout(f"job exceeded {self.job_timeout}s")
                with self._lock:
                    job.records_processed = i
        with self._lock:
            job.records_processed = len(records)
