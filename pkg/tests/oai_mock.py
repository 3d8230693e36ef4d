"""In-process OAI-PMH 2.0 server for tests."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse
from xml.sax.saxutils import escape

OAI_NS = "http://www.openarchives.org/OAI/2.0/"


@dataclass
class MockRecord:
    identifier: str
    datestamp: str = "2012-01-01T00:00:00Z"
    dc: dict = field(default_factory=dict)  # element -> list of str or (str, lang)
    deleted: bool = False


def dc_xml(dc: dict) -> str:
    parts = ['<oai_dc:dc xmlns:oai_dc="http://www.openarchives.org/OAI/2.0/oai_dc/" '
             'xmlns:dc="http://purl.org/dc/elements/1.1/">']
    for name, values in dc.items():
        for v in values:
            value, lang = (v, None) if isinstance(v, str) else v
            attr = f' xml:lang="{lang}"' if lang else ""
            parts.append(f"<dc:{name}{attr}>{escape(value)}</dc:{name}>")
    parts.append("</oai_dc:dc>")
    return "".join(parts)


def record_xml(rec: MockRecord) -> str:
    status = ' status="deleted"' if rec.deleted else ""
    header = (f"<header{status}><identifier>{escape(rec.identifier)}</identifier>"
              f"<datestamp>{rec.datestamp}</datestamp></header>")
    if rec.deleted:
        return f"<record>{header}</record>"
    return f"<record>{header}<metadata>{dc_xml(rec.dc)}</metadata></record>"


def envelope(verb_xml: str, request_attrs: str = "") -> str:
    return (f'<?xml version="1.0" encoding="UTF-8"?>'
            f'<OAI-PMH xmlns="{OAI_NS}"><responseDate>2024-01-01T00:00:00Z</responseDate>'
            f"<request{request_attrs}>http://mock/oai</request>{verb_xml}</OAI-PMH>")


def error_xml(code: str, message: str = "") -> str:
    return envelope(f'<error code="{code}">{escape(message)}</error>')


class MockOAIServer:
    """Serves ``records`` page by page; tokens are ``t1``, ``t2``, ...

    Failure knobs:
      * ``fail_status`` with ``fail_count`` (None = forever)
      * ``retry_after`` header sent along with 503 failures
      * ``expire_token``: the first use of this token gets badResumptionToken
      * ``always_expire``: every token is rejected
      * ``html``: answer every request with an HTML page
    """

    def __init__(self, records=(), page_size: int = 2, name: str = "TestRepo", version: str = "2.0"):
        self.records = list(records)
        self.page_size = page_size
        self.name = name
        self.version = version
        self.fail_status: int | None = None
        self.fail_count: int | None = None
        self.retry_after: str | None = None
        self.expire_token: str | None = None
        self.always_expire = False
        self.html = False
        self.requests: list[dict] = []
        self._expired: set[str] = set()
        self._lock = threading.Lock()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self.thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/oai"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                params = {k: v[0] for k, v in parse_qs(urlparse(self.path).query).items()}
                status, body, headers = server.respond(params)
                data = body.encode("utf-8")
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler

    def respond(self, params: dict):
        with self._lock:
            self.requests.append(params)
            if self.fail_status is not None and (self.fail_count is None or self.fail_count > 0):
                if self.fail_count is not None:
                    self.fail_count -= 1
                headers = {"Retry-After": self.retry_after} if self.retry_after else {}
                return self.fail_status, "failure", headers
        if self.html:
            return 200, "<html><body>Not an OAI endpoint</body></html>", {"Content-Type": "text/html"}
        xml = {"Content-Type": "text/xml"}
        verb = params.get("verb")
        if verb == "Identify":
            return 200, envelope(
                f"<Identify><repositoryName>{self.name}</repositoryName><baseURL>http://mock/oai</baseURL>"
                f"<protocolVersion>{self.version}</protocolVersion>"
                f"<earliestDatestamp>2000-01-01T00:00:00Z</earliestDatestamp></Identify>"
            ), xml
        if verb != "ListRecords":
            return 200, error_xml("badVerb", "unsupported verb"), xml
        token = params.get("resumptionToken")
        if token is None:
            if params.get("metadataPrefix") != "oai_dc":
                return 200, error_xml("cannotDisseminateFormat"), xml
            selected = self._select(params.get("from"), params.get("until"))
            if not selected:
                return 200, error_xml("noRecordsMatch"), xml
            page = 0
        else:
            with self._lock:
                if self.always_expire or (token == self.expire_token and token not in self._expired):
                    self._expired.add(token)
                    return 200, error_xml("badResumptionToken", "expired"), xml
            if not token.startswith("t") or not token[1:].isdigit():
                return 200, error_xml("badResumptionToken", "unknown token"), xml
            page = int(token[1:])
            selected = self._select(None, None)
        chunk = selected[page * self.page_size:(page + 1) * self.page_size]
        more = (page + 1) * self.page_size < len(selected)
        body = "".join(record_xml(r) for r in chunk)
        if more:
            body += f'<resumptionToken completeListSize="{len(selected)}">t{page + 1}</resumptionToken>'
        elif token is not None:
            body += f'<resumptionToken completeListSize="{len(selected)}"/>'
        return 200, envelope(f"<ListRecords>{body}</ListRecords>"), xml

    def _select(self, frm, until):
        out = self.records
        if frm:
            out = [r for r in out if r.datestamp[:len(frm)] >= frm]
        if until:
            out = [r for r in out if r.datestamp[:len(until)] <= until]
        return out

    def list_records_bodies(self) -> list[str]:
        """Every ListRecords page as the server would send it (for file-ingest tests)."""
        bodies, token = [], None
        while True:
            params = {"verb": "ListRecords", "metadataPrefix": "oai_dc"}
            if token:
                params = {"verb": "ListRecords", "resumptionToken": token}
            _, body, _ = self.respond(params)
            bodies.append(body)
            page = (int(token[1:]) if token else 0) + 1
            if page * self.page_size >= len(self.records):
                return bodies
            token = f"t{page}"


FIXTURE = [
    MockRecord("oai:test:d1", "2012-01-01T00:00:00Z",
               {"title": ["Youth unemployment"], "subject": ["Labor market", "Adolescent"]}),
    MockRecord("oai:test:d2", "2012-01-02T00:00:00Z",
               {"title": ["Youth education"], "subject": ["Adolescent"]}),
    MockRecord("oai:test:d3", "2012-01-03T00:00:00Z",
               {"title": ["Unemployment"], "subject": ["Labor market"]}),
    MockRecord("oai:test:d4", "2012-01-04T00:00:00Z",
               {"title": ["Education"], "subject": ["School"]}),
]


def numbered_records(n: int) -> list[MockRecord]:
    return [
        MockRecord(f"oai:test:{i}", f"2012-01-{i % 28 + 1:02d}T00:00:00Z",
                   {"title": [f"Record number {i}"], "subject": [f"topic {i % 3}"]})
        for i in range(n)
    ]
