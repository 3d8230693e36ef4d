"""Operator command line.

Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_settings, parse_listen
from .engine import Metric
from .harvester import EndpointConfig, HarvestError, identify, parse_datestamp
from .metadata import DC_ELEMENTS, FieldMapping
from .pipeline import JobActive, Scheduler
from .service import ApiError, SuggestionService, export_rows
from .store import FileSource, FileStore, NotFound, StoreError
from .text import PipelineConfig, default_stopwords, load_stopwords

logger = logging.getLogger("termsuggest")

LOCAL_OWNER = "local"


class OperationalError(Exception):
    pass


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="termsuggest", description="Build and query term suggestion services.")
    p.add_argument("--config", help="INI settings file")
    p.add_argument("--store", help="storage directory (overrides settings)")
    p.add_argument("--format", choices=("human", "json"), default="human")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    reg = sub.add_parser("register", help="register a repository")
    reg.add_argument("name")
    src = reg.add_mutually_exclusive_group(required=True)
    src.add_argument("--endpoint", metavar="URL", help="OAI-PMH base URL")
    src.add_argument("--files", nargs="+", metavar="FILE", help="oai_dc XML files or directories")
    reg.add_argument("--set", dest="set_spec")
    reg.add_argument("--from", dest="from_date")
    reg.add_argument("--until", dest="until_date")
    reg.add_argument("--source-fields", default="title,description", help="comma-separated DC elements")
    reg.add_argument("--target-field", default="subject", choices=DC_ELEMENTS)
    reg.add_argument("--lang", help="keep only values with this xml:lang (untagged values always kept)")
    reg.add_argument("--stopwords", metavar="FILE", help="replace the bundled stopword list")
    reg.add_argument("--min-token-length", type=int, default=2)
    reg.add_argument("--keep-case", action="store_true")
    reg.add_argument("--owner", default=LOCAL_OWNER)
    reg.add_argument("--public", action="store_true", help="allow suggest without an API key")
    reg.add_argument("--no-verify", action="store_true", help="skip the Identify check")

    sch = sub.add_parser("schedule", help="queue a processing job")
    sch.add_argument("repo")
    sch.add_argument("--run", action="store_true", help="run the job now, in this process")

    sub.add_parser("work", help="run all queued jobs in this process")

    st = sub.add_parser("status", help="show a repository or job")
    st.add_argument("ref", help="repository name/id or job id")

    sg = sub.add_parser("suggest", help="suggest terms")
    sg.add_argument("repo")
    sg.add_argument("term")
    sg.add_argument("--k", type=int, default=10)
    sg.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.JACCARD.value)

    ing = sub.add_parser("ingest", help="build a repository from local files, no network")
    ing.add_argument("repo")
    ing.add_argument("files", nargs="+")

    ex = sub.add_parser("export", help="dump the recommendation table")
    ex.add_argument("repo")
    ex.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.JACCARD.value)
    ex.add_argument("--k", type=int, help="top k targets per source term")

    keys = sub.add_parser("keys", help="manage API keys")
    ksub = keys.add_subparsers(dest="keys_command", required=True, metavar="ACTION")
    ki = ksub.add_parser("issue")
    ki.add_argument("owner")
    kr = ksub.add_parser("revoke")
    kr.add_argument("key_id")
    ksub.add_parser("list")

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--listen", help="host:port")
    return p


class App:
    def __init__(self, args, out=sys.stdout):
        self.args = args
        self.out = out
        self.settings = load_settings(args.config)
        if args.store:
            self.settings.storage_path = args.store
        self.store = FileStore(self.settings.storage_path)

    def emit(self, payload, human: str) -> None:
        if self.args.format == "json":
            print(json.dumps(payload, indent=2, sort_keys=True, default=str), file=self.out)
        elif human:
            print(human, file=self.out)

    def scheduler(self, **kw) -> Scheduler:
        return Scheduler(self.store, workers=self.settings.workers, job_timeout=self.settings.job_timeout, **kw)

    def repo(self, ref: str):
        return self.store.find_repository(ref)

    def cmd_register(self):
        a = self.args
        mapping = FieldMapping(tuple(_csv(a.source_fields)), a.target_field, a.lang)
        pipeline = PipelineConfig(
            lowercase=not a.keep_case,
            min_token_length=a.min_token_length,
            stopwords=load_stopwords(a.stopwords) if a.stopwords else default_stopwords(),
        )
        if a.endpoint:
            source = EndpointConfig(
                a.endpoint, set_spec=a.set_spec,
                from_date=parse_datestamp(a.from_date) if a.from_date else None,
                until_date=parse_datestamp(a.until_date) if a.until_date else None,
            )
            if not a.no_verify:
                desc = identify(source)
                logger.info("endpoint %s: %s (OAI-PMH %s)", a.endpoint, desc.name, desc.version)
        else:
            source = FileSource(tuple(a.files))
        rec = self.store.create_repository(a.name, a.owner, source, mapping, pipeline, public=a.public)
        self.emit(rec.to_dict(), f"registered {rec.name} ({rec.repo_id}) status={rec.status.value}")

    def cmd_schedule(self):
        rec = self.repo(self.args.repo)
        sched = self.scheduler(autostart=False)
        job = sched.schedule(rec.repo_id)
        if self.args.run:
            result = sched.run_job(job)
            self._print_job(result.job)
            if not result.ok:
                raise OperationalError(result.job.error)
            return
        self._print_job(job)

    def cmd_work(self):
        results = self.scheduler(autostart=False).drain()
        for r in results:
            self._print_job(r.job)
        if not results:
            self.emit([], "no queued jobs")
        if any(not r.ok for r in results):
            raise OperationalError(f"{sum(not r.ok for r in results)} job(s) failed")

    def _print_job(self, job):
        d = job.to_dict()
        human = (f"job {job.job_id} repo={job.repo_id} stage={job.stage.value} "
                 f"harvested={job.records_harvested} processed={job.records_processed}")
        if job.snapshot:
            human += f" snapshot={job.snapshot}"
        if job.error:
            human += f" error={job.error}"
        self.emit(d, human)

    def cmd_status(self):
        ref = self.args.ref
        try:
            rec = self.repo(ref)
        except NotFound:
            self._print_job(Scheduler(self.store).job_status(ref))
            return
        d = rec.to_dict()
        human = f"{rec.name} ({rec.repo_id}) status={rec.status.value}"
        if rec.published_snapshot:
            human += f" snapshot={rec.published_snapshot}"
        if rec.last_error:
            human += f" last_error={rec.last_error}"
        self.emit(d, human)

    def cmd_suggest(self):
        a = self.args
        if not a.term.strip():
            raise ApiError(400, "empty_term", "term must not be empty")
        if a.k < 1:
            raise ApiError(400, "invalid_k", "--k must be >= 1")
        rec = self.repo(a.repo)
        service = SuggestionService(self.store, Scheduler(self.store, autostart=False))
        payload = service.suggest_for(rec, a.term, a.k, a.metric)
        lines = [f"{s['term']} {s['score']:.3f}" for s in payload["suggestions"]]
        if not payload["term_found"]:
            lines = [f"term not found: {payload['query']}"]
        self.emit(payload, "\n".join(lines))

    def cmd_ingest(self):
        a = self.args
        try:
            rec = self.repo(a.repo)
        except NotFound:
            rec = self.store.create_repository(a.repo, LOCAL_OWNER, FileSource(tuple(a.files)))
        sched = self.scheduler(autostart=False)
        result = sched.run_job(sched.schedule(rec.repo_id, files=a.files))
        self._print_job(result.job)
        if not result.ok:
            raise OperationalError(result.job.error)

    def cmd_export(self):
        rec = self.repo(self.args.repo)
        current = self.store.published(rec.repo_id)
        if current is None:
            raise OperationalError(f"repository {rec.name} has no published snapshot")
        sid, index = current
        rows = export_rows(index, Metric.parse(self.args.metric), self.args.k)
        human = "\n".join(f"{r['source']}\t{r['target']}\t{r['score']:.6f}\t{r['df_joint']}" for r in rows)
        self.emit({"repo_id": rec.repo_id, "snapshot": str(sid), "rows": rows}, human)

    def cmd_keys(self):
        a = self.args
        if a.keys_command == "issue":
            plaintext, key = self.store.issue_key(a.owner)
            self.emit({"key": plaintext, "key_id": key.key_id, "owner": key.owner}, plaintext)
        elif a.keys_command == "revoke":
            self.store.revoke_key(a.key_id)
            self.emit({"revoked": a.key_id}, f"revoked {a.key_id}")
        else:
            keys = self.store.list_keys()
            self.emit(
                [{"key_id": k.key_id, "owner": k.owner, "revoked": k.revoked} for k in keys],
                "\n".join(f"{k.key_id}\t{k.owner}\t{'revoked' if k.revoked else 'active'}" for k in keys),
            )

    def cmd_serve(self):
        import uvicorn

        from .service import create_app

        host, port = parse_listen(self.args.listen or self.settings.listen)
        sched = self.scheduler()
        sched.resume_pending()
        service = SuggestionService(self.store, sched, admin_token=self.settings.admin_token,
                                    rate_limit=self.settings.rate_limit)
        try:
            uvicorn.run(create_app(service), host=host, port=port, log_level="info")
        finally:
            sched.shutdown(wait=False)


def run(argv: list[str] | None = None, out=sys.stdout, err=sys.stderr) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=err,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        app = App(args, out)
        getattr(app, "cmd_" + args.command)()
    except ApiError as exc:
        print(f"termsuggest: error: {exc.message}", file=err)
        if exc.status == 400:
            parser.print_usage(err)
            return 2
        return 1
    except JobActive as exc:
        print(f"termsuggest: error: {exc}", file=err)
        return 1
    except (OperationalError, StoreError, HarvestError, OSError) as exc:
        print(f"termsuggest: error: {exc}", file=err)
        return 1
    except ValueError as exc:
        print(f"termsuggest: error: {exc}", file=err)
        parser.print_usage(err)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
