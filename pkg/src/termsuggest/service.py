"""HTTP API for repository management, job control and term suggestions.

:class:`SuggestionService` holds the request logic and raises
:class:`ApiError` with an HTTP status; :func:`create_app` wraps it in
FastAPI. Wire schema: see ``docs/wire-schema.md``.
"""

from __future__ import annotations

import hmac
import logging
import threading
import time
import uuid
from collections.abc import Callable
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .engine import Metric, recommend, recommend_multi
from .harvester import EndpointConfig, HarvestError, identify, ingest_files
from .metadata import FieldMapping
from .pipeline import JobActive, Scheduler
from .store import ApiKey, Conflict, FileSource, FileStore, NotFound, RepositoryRecord
from .text import PipelineConfig, tokenize_free_text

logger = logging.getLogger(__name__)

MEDIA_TYPE = "application/json; version=1"
DEFAULT_K = 10
MAX_K = 100


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, headers: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.headers = headers or {}

    def body(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


class RateLimiter:
    """Token bucket per key: ``rate`` tokens per second, burst of ``rate``."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic):
        self.rate = float(rate)
        self.clock = clock
        self._buckets: dict[str, tuple[float, float]] = {}
        self._lock = threading.Lock()

    def check(self, key: str) -> float | None:
        """None if allowed, else seconds until the next token."""
        if self.rate <= 0:
            return None
        now = self.clock()
        with self._lock:
            tokens, last = self._buckets.get(key, (self.rate, now))
            tokens = min(self.rate, tokens + (now - last) * self.rate)
            if tokens < 1.0:
                self._buckets[key] = (tokens, now)
                return (1.0 - tokens) / self.rate
            self._buckets[key] = (tokens - 1.0, now)
            return None


def repository_view(rec: RepositoryRecord) -> dict:
    d = rec.to_dict()
    d.pop("pipeline", None)
    return d


def job_view(job) -> dict:
    d = job.to_dict()
    d["poll"] = f"/v1/jobs/{job.job_id}"
    return d


class SuggestionService:
    def __init__(self, store: FileStore, scheduler: Scheduler | None = None, admin_token: str | None = None,
                 rate_limit: float = 100.0, validate_endpoint: Callable[[EndpointConfig], object] = identify):
        self.store = store
        self.scheduler = scheduler or Scheduler(store)
        self.admin_token = admin_token
        self.limiter = RateLimiter(rate_limit)
        self.validate_endpoint = validate_endpoint

    # auth

    def authenticate(self, authorization: str | None) -> ApiKey:
        presented = None
        if authorization:
            scheme, _, value = authorization.partition(" ")
            if scheme.lower() == "bearer":
                presented = value.strip()
        key = self.store.authenticate(presented)
        if key is None:
            raise ApiError(401, "unauthorized", "missing, invalid or revoked API key",
                           {"WWW-Authenticate": "Bearer"})
        wait = self.limiter.check(key.key_id)
        if wait is not None:
            raise ApiError(429, "rate_limited", "too many requests",
                           {"Retry-After": str(max(1, round(wait)))})
        return key

    def _owned_repo(self, auth: ApiKey, repo_id: str) -> RepositoryRecord:
        try:
            rec = self.store.get_repository(repo_id)
        except NotFound:
            raise ApiError(404, "not_found", f"unknown repository {repo_id}") from None
        if rec.owner != auth.owner:
            raise ApiError(403, "forbidden", "repository belongs to another owner")
        return rec

    def issue_api_key(self, admin_credential: str, owner: str) -> tuple[str, ApiKey]:
        if not self.admin_token or not hmac.compare_digest(
            (admin_credential or "").encode(), self.admin_token.encode()
        ):
            raise ApiError(401, "unauthorized", "invalid admin credential")
        return self.store.issue_key(owner)

    # handlers

    def handle_register_repository(self, auth: ApiKey, request: dict) -> RepositoryRecord:
        name = request.get("name")
        if not isinstance(name, str) or not name.strip():
            raise ApiError(422, "invalid_request", "name is required")
        try:
            mapping = FieldMapping.from_dict(request.get("mapping"))
            pipeline = PipelineConfig.from_dict(request.get("pipeline"))
        except (TypeError, ValueError) as exc:
            raise ApiError(422, "invalid_mapping", str(exc)) from None
        source = self._parse_source(request.get("source"))
        try:
            return self.store.create_repository(name.strip(), auth.owner, source, mapping, pipeline,
                                                public=bool(request.get("public", False)))
        except Conflict as exc:
            raise ApiError(409, "duplicate_name", str(exc)) from None

    def _parse_source(self, src) -> EndpointConfig | FileSource:
        if not isinstance(src, dict):
            raise ApiError(422, "invalid_source", "source must be an object")
        kind = src.get("type", "oai")
        if kind == "oai":
            params = src.get("endpoint", {k: v for k, v in src.items() if k != "type"})
            try:
                config = EndpointConfig.from_dict(params)
            except (TypeError, ValueError) as exc:
                raise ApiError(422, "invalid_source", str(exc)) from None
            try:
                self.validate_endpoint(config)
            except HarvestError as exc:
                raise ApiError(422, "identify_failed", f"endpoint validation failed: {exc}") from None
            return config
        if kind == "files":
            files = src.get("files")
            if not isinstance(files, list) or not files:
                raise ApiError(422, "invalid_source", "files must be a non-empty list")
            upload = self.store.root / "uploads" / uuid.uuid4().hex
            upload.mkdir(parents=True)
            paths = []
            for i, f in enumerate(files):
                if not isinstance(f, dict):
                    raise ApiError(422, "invalid_source", "each file must be an object with name and content")
                fname = Path(str(f.get("name") or f"upload{i}.xml")).name
                p = upload / f"{i:04d}_{fname}"
                p.write_text(str(f.get("content", "")), encoding="utf-8")
                paths.append(str(p))
            ingest = ingest_files(paths)
            records = sum(1 for _ in ingest)
            if ingest.failures:
                bad = ingest.failures[0]
                raise ApiError(422, "invalid_source", f"{Path(bad.path).name}: {bad.message}")
            if not records:
                raise ApiError(422, "invalid_source", "uploaded files contain no records")
            return FileSource(tuple(paths))
        raise ApiError(422, "invalid_source", f"unknown source type {kind!r}")

    def handle_get_repository(self, auth: ApiKey, repo_id: str) -> dict:
        return repository_view(self._owned_repo(auth, repo_id))

    def handle_schedule(self, auth: ApiKey, repo_id: str) -> dict:
        self._owned_repo(auth, repo_id)
        try:
            job = self.scheduler.schedule(repo_id)
        except JobActive as exc:
            raise ApiError(409, "job_active", str(exc)) from None
        return job_view(job)

    def handle_job_status(self, auth: ApiKey, job_id: str) -> dict:
        try:
            job = self.scheduler.job_status(job_id)
        except NotFound:
            raise ApiError(404, "not_found", f"unknown job {job_id}") from None
        self._owned_repo(auth, job.repo_id)
        return job_view(job)

    def _published(self, rec: RepositoryRecord):
        current = self.store.published(rec.repo_id)
        if current is None:
            raise ApiError(409, "not_published", "repository has no published snapshot")
        return current

    def handle_suggest(self, auth: ApiKey | None, repo_id: str, term: str | None,
                       k: int | str | None = None, metric: str | None = None) -> dict:
        if auth is None:
            try:
                rec = self.store.get_repository(repo_id)
            except NotFound:
                rec = None
            if rec is None or not rec.public:
                raise ApiError(401, "unauthorized", "missing, invalid or revoked API key")
        else:
            rec = self._owned_repo(auth, repo_id)
        return self.suggest_for(rec, term, k, metric)

    def suggest_for(self, rec: RepositoryRecord, term: str | None,
                    k: int | str | None = None, metric: str | None = None) -> dict:
        """Suggestion payload for an already-authorized repository."""
        try:
            k = DEFAULT_K if k is None or k == "" else int(k)
        except ValueError:
            raise ApiError(400, "invalid_k", "k must be an integer") from None
        if k < 1:
            raise ApiError(400, "invalid_k", "k must be >= 1")
        k = min(k, MAX_K)
        try:
            metric = Metric.parse(metric or Metric.JACCARD)
        except ValueError as exc:
            raise ApiError(400, "invalid_metric", str(exc)) from None
        tokens = tokenize_free_text(term or "", rec.pipeline)
        if not tokens:
            raise ApiError(400, "empty_term", "term is empty after normalization")
        sid, index = self._published(rec)
        if len(tokens) == 1:
            recs = recommend(index, tokens[0], k, metric)
        else:
            recs = recommend_multi(index, tokens, k, metric)
        return {
            "query": " ".join(tokens),
            "repo_id": rec.repo_id,
            "metric": metric.value,
            "suggestions": [
                {"term": r.term, "score": r.score, "df_term": r.df_term, "df_joint": r.df_joint}
                for r in recs
            ],
            "term_found": recs.term_found,
            "corpus_size": index.n_docs,
            "snapshot": str(sid),
        }

    def handle_export(self, auth: ApiKey, repo_id: str, metric: str | None = None) -> dict:
        rec = self._owned_repo(auth, repo_id)
        try:
            metric = Metric.parse(metric or Metric.JACCARD)
        except ValueError as exc:
            raise ApiError(400, "invalid_metric", str(exc)) from None
        sid, index = self._published(rec)
        return {"repo_id": rec.repo_id, "snapshot": str(sid), "metric": metric.value,
                "rows": export_rows(index, metric)}


def export_rows(index, metric: Metric, k: int | None = None) -> list[dict]:
    """Full recommendation table: every source term with its ranked targets."""
    rows = []
    for term in index.source_terms:
        limit = k or len(index.target_terms) or 1
        for r in recommend(index, term, limit, metric):
            rows.append({"source": term, "target": r.term, "score": r.score,
                         "df_term": r.df_term, "df_joint": r.df_joint})
    return rows


def create_app(service: SuggestionService) -> FastAPI:
    app = FastAPI(title="termsuggest", version="1")

    def reply(body, status: int = 200) -> JSONResponse:
        return JSONResponse(body, status_code=status, media_type=MEDIA_TYPE)

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(exc.body(), status_code=exc.status, headers=exc.headers, media_type=MEDIA_TYPE)

    def auth(request: Request) -> ApiKey:
        return service.authenticate(request.headers.get("authorization"))

    async def json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except ValueError:
            raise ApiError(400, "invalid_json", "request body must be JSON") from None
        if not isinstance(body, dict):
            raise ApiError(400, "invalid_json", "request body must be a JSON object")
        return body

    @app.get("/v1/health")
    def health():
        return reply({"status": "ok"})

    @app.post("/v1/repositories")
    async def register(request: Request):
        key = auth(request)
        body = await json_body(request)
        # endpoint validation does blocking network I/O
        rec = await run_in_threadpool(service.handle_register_repository, key, body)
        return reply(repository_view(rec), 201)

    @app.get("/v1/repositories/{repo_id}")
    def get_repository(repo_id: str, request: Request):
        return reply(service.handle_get_repository(auth(request), repo_id))

    @app.post("/v1/repositories/{repo_id}/schedule")
    def schedule(repo_id: str, request: Request):
        return reply(service.handle_schedule(auth(request), repo_id), 202)

    @app.get("/v1/jobs/{job_id}")
    def job_status(job_id: str, request: Request):
        return reply(service.handle_job_status(auth(request), job_id))

    @app.get("/v1/repositories/{repo_id}/suggest")
    def suggest(repo_id: str, request: Request, term: str = "", k: str | None = None, metric: str | None = None):
        header = request.headers.get("authorization")
        key = service.authenticate(header) if header else None
        return reply(service.handle_suggest(key, repo_id, term, k, metric))

    @app.get("/v1/repositories/{repo_id}/export")
    def export(repo_id: str, request: Request, metric: str | None = None):
        return reply(service.handle_export(auth(request), repo_id, metric))

    return app
