"""OAI-PMH 2.0 harvesting client and local oai_dc file ingest.

Only the ``Identify`` and ``ListRecords`` verbs are used. Requests against one
endpoint are strictly sequential because resumption tokens are stateful.
"""

from __future__ import annotations

import logging
import time
import xml.etree.ElementTree as ET
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from pathlib import Path
from urllib.parse import urlparse

import requests

logger = logging.getLogger(__name__)

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
DC_NS = "http://purl.org/dc/elements/1.1/"

_OAI = "{%s}" % OAI_NS
RETRY_AFTER_CAP = 300.0
SUPPORTED_PREFIXES = ("oai_dc",)


class HarvestError(Exception):
    """Network or protocol failure while talking to an OAI-PMH endpoint."""


class MalformedResponse(HarvestError):
    pass


class OAIError(HarvestError):
    """An ``<error code=...>`` element returned by the repository."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)


class BadResumptionToken(OAIError):
    pass


class CannotDisseminateFormat(OAIError):
    pass


class RestartLoop(HarvestError):
    """A second badResumptionToken after the single permitted restart."""


_OAI_ERROR_TYPES = {
    "badResumptionToken": BadResumptionToken,
    "cannotDisseminateFormat": CannotDisseminateFormat,
}


def parse_datestamp(value: str) -> datetime:
    value = value.strip()
    for fmt in ("%Y-%m-%dT%H:%M:%SZ", "%Y-%m-%d"):
        try:
            return datetime.strptime(value, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_datestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    metadata_prefix: str = "oai_dc"
    set_spec: str | None = None
    from_date: datetime | None = None
    until_date: datetime | None = None
    max_retries: int = 3
    backoff_base: float = 1.0
    timeout: float = 30.0

    def __post_init__(self):
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"base_url must be an absolute http(s) URL: {self.base_url!r}")
        if self.metadata_prefix not in SUPPORTED_PREFIXES:
            raise ValueError(f"unsupported metadata prefix {self.metadata_prefix!r}")
        if self.from_date and self.until_date and self.from_date > self.until_date:
            raise ValueError("from must not be later than until")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.backoff_base < 0:
            raise ValueError("backoff_base must be >= 0")

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "metadata_prefix": self.metadata_prefix,
            "set_spec": self.set_spec,
            "from": format_datestamp(self.from_date) if self.from_date else None,
            "until": format_datestamp(self.until_date) if self.until_date else None,
            "max_retries": self.max_retries,
            "backoff_base": self.backoff_base,
            "timeout": self.timeout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> EndpointConfig:
        data = dict(data)
        frm = data.pop("from", None) or data.pop("from_date", None)
        until = data.pop("until", None) or data.pop("until_date", None)
        if "set" in data:  # the OAI-PMH request parameter name
            data["set_spec"] = data.pop("set")
        return cls(
            from_date=parse_datestamp(frm) if isinstance(frm, str) else frm,
            until_date=parse_datestamp(until) if isinstance(until, str) else until,
            **data,
        )


@dataclass(frozen=True)
class RawRecord:
    identifier: str
    datestamp: datetime
    deleted: bool = False
    metadata_xml: str | None = None

    def to_dict(self) -> dict:
        return {
            "identifier": self.identifier,
            "datestamp": format_datestamp(self.datestamp),
            "deleted": self.deleted,
            "metadata_xml": self.metadata_xml,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RawRecord:
        return cls(
            identifier=data["identifier"],
            datestamp=parse_datestamp(data["datestamp"]),
            deleted=bool(data.get("deleted", False)),
            metadata_xml=data.get("metadata_xml"),
        )


@dataclass
class HarvestPage:
    records: list[RawRecord]
    resumption_token: str | None = None
    complete_list_size: int | None = None
    no_records_match: bool = False

    @property
    def is_final(self) -> bool:
        return not self.resumption_token


@dataclass(frozen=True)
class RepositoryDescription:
    name: str
    version: str
    earliest_datestamp: str | None = None
    base_url: str | None = None


def _text(elem: ET.Element | None) -> str | None:
    if elem is None or elem.text is None:
        return None
    return elem.text.strip()


def _record_from_element(elem: ET.Element) -> RawRecord:
    header = elem.find(_OAI + "header")
    if header is None:
        header = elem.find("header")
    if header is None:
        raise MalformedResponse("record without header")
    ns = _OAI if header.tag.startswith("{") else ""
    identifier = _text(header.find(ns + "identifier"))
    if not identifier:
        raise MalformedResponse("record header without identifier")
    stamp = _text(header.find(ns + "datestamp"))
    datestamp = parse_datestamp(stamp) if stamp else datetime.fromtimestamp(0, timezone.utc)
    deleted = header.get("status") == "deleted"
    metadata_xml = None
    metadata = elem.find(ns + "metadata")
    if metadata is not None and len(metadata):
        metadata_xml = ET.tostring(metadata[0], encoding="unicode")
    return RawRecord(identifier, datestamp, deleted, metadata_xml)


def _record_from_bare_dc(elem: ET.Element, fallback_id: str) -> RawRecord:
    ident = _text(elem.find("{%s}identifier" % DC_NS)) or fallback_id
    stamp = _text(elem.find("{%s}date" % DC_NS))
    try:
        datestamp = parse_datestamp(stamp) if stamp else datetime.fromtimestamp(0, timezone.utc)
    except ValueError:
        datestamp = datetime.fromtimestamp(0, timezone.utc)
    return RawRecord(ident, datestamp, False, ET.tostring(elem, encoding="unicode"))


def _raise_oai_errors(root: ET.Element) -> None:
    errors = root.findall(_OAI + "error")
    if not errors:
        return
    first = errors[0]
    code = first.get("code", "unknown")
    cls = _OAI_ERROR_TYPES.get(code, OAIError)
    raise cls(code, (first.text or "").strip())


def parse_list_records(body: bytes | str) -> HarvestPage:
    """Parse one ListRecords response body."""
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise MalformedResponse(f"response is not XML: {exc}") from exc
    if root.tag != _OAI + "OAI-PMH":
        raise MalformedResponse(f"unexpected root element {root.tag}")
    try:
        _raise_oai_errors(root)
    except OAIError as exc:
        if exc.code == "noRecordsMatch":
            return HarvestPage(records=[], no_records_match=True)
        raise
    listing = root.find(_OAI + "ListRecords")
    if listing is None:
        raise MalformedResponse("ListRecords element missing")
    records = [_record_from_element(r) for r in listing.findall(_OAI + "record")]
    token_el = listing.find(_OAI + "resumptionToken")
    token = _text(token_el) or None
    size = None
    if token_el is not None and token_el.get("completeListSize"):
        size = int(token_el.get("completeListSize"))
    if token and not records:
        raise MalformedResponse("non-final page without records")
    return HarvestPage(records, token, size)


def _retry_after_seconds(value: str | None) -> float | None:
    if not value:
        return None
    try:
        seconds = float(value)
    except ValueError:
        try:
            when = parsedate_to_datetime(value)
        except (TypeError, ValueError):
            return None
        seconds = (when - datetime.now(timezone.utc)).total_seconds()
    return min(max(seconds, 0.0), RETRY_AFTER_CAP)


class Harvester:
    """Sequential OAI-PMH client for one endpoint.

    ``sleep`` is injectable so tests can observe backoff delays without waiting.
    """

    def __init__(
        self,
        config: EndpointConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.session = session or requests.Session()
        self.sleep = sleep
        self.delays: list[float] = []

    def _get(self, params: dict) -> bytes:
        cfg = self.config
        attempt = 0
        previous = 0.0
        while True:
            delay = cfg.backoff_base * (2**attempt)
            try:
                resp = self.session.get(cfg.base_url, params=params, timeout=cfg.timeout)
            except requests.RequestException as exc:
                failure: str = f"network error: {exc}"
            else:
                if resp.status_code == 200:
                    return resp.content
                failure = f"HTTP {resp.status_code} from {cfg.base_url}"
                if resp.status_code == 503:
                    hinted = _retry_after_seconds(resp.headers.get("Retry-After"))
                    if hinted is not None:
                        delay = hinted
                elif 400 <= resp.status_code < 500 and resp.status_code not in (408, 429):
                    raise HarvestError(failure)
            if attempt >= cfg.max_retries:
                raise HarvestError(f"{failure} (gave up after {attempt + 1} attempts)")
            attempt += 1
            delay = previous = max(delay, previous)
            logger.warning("%s; retry %d/%d in %.2fs", failure, attempt, cfg.max_retries, delay)
            self.delays.append(delay)
            self.sleep(delay)

    def identify(self) -> RepositoryDescription:
        body = self._get({"verb": "Identify"})
        try:
            root = ET.fromstring(body)
        except ET.ParseError as exc:
            raise MalformedResponse(f"response is not XML: {exc}") from exc
        if root.tag != _OAI + "OAI-PMH":
            raise MalformedResponse(f"unexpected root element {root.tag}")
        _raise_oai_errors(root)
        info = root.find(_OAI + "Identify")
        if info is None:
            raise MalformedResponse("Identify element missing")
        return RepositoryDescription(
            name=_text(info.find(_OAI + "repositoryName")) or "",
            version=_text(info.find(_OAI + "protocolVersion")) or "",
            earliest_datestamp=_text(info.find(_OAI + "earliestDatestamp")),
            base_url=_text(info.find(_OAI + "baseURL")),
        )

    def list_records_params(self, token: str | None) -> dict:
        if token:
            return {"verb": "ListRecords", "resumptionToken": token}
        cfg = self.config
        params = {"verb": "ListRecords", "metadataPrefix": cfg.metadata_prefix}
        if cfg.set_spec:
            params["set"] = cfg.set_spec
        if cfg.from_date:
            params["from"] = format_datestamp(cfg.from_date)
        if cfg.until_date:
            params["until"] = format_datestamp(cfg.until_date)
        return params

    def harvest_page(self, token: str | None = None) -> HarvestPage:
        return parse_list_records(self._get(self.list_records_params(token)))

    def harvest_all(self, progress: Callable[[int], None] | None = None) -> Iterator[RawRecord]:
        """Yield every record once, following resumption tokens to the end.

        Records are buffered so duplicates can be resolved to the latest
        datestamp; ``progress`` receives the running fetched-record count.
        """
        restarted = False
        while True:
            latest: dict[str, RawRecord] = {}
            fetched = 0
            token = None
            try:
                while True:
                    page = self.harvest_page(token)
                    for rec in page.records:
                        prev = latest.get(rec.identifier)
                        if prev is None or rec.datestamp >= prev.datestamp:
                            # re-insert keeps first-seen position only for new ids
                            latest[rec.identifier] = rec
                    fetched += len(page.records)
                    if progress:
                        progress(fetched)
                    if page.is_final:
                        break
                    token = page.resumption_token
            except BadResumptionToken:
                if restarted:
                    raise RestartLoop("badResumptionToken after restart; aborting harvest")
                logger.warning("resumption token rejected, restarting harvest from scratch")
                restarted = True
                continue
            yield from latest.values()
            return


def identify(config: EndpointConfig, **kwargs) -> RepositoryDescription:
    return Harvester(config, **kwargs).identify()


def harvest_page(config: EndpointConfig, token: str | None = None, **kwargs) -> HarvestPage:
    return Harvester(config, **kwargs).harvest_page(token)


def harvest_all(config: EndpointConfig, **kwargs) -> Iterator[RawRecord]:
    progress = kwargs.pop("progress", None)
    return Harvester(config, **kwargs).harvest_all(progress=progress)


@dataclass
class ParseFailure:
    path: str
    offset: int | None
    message: str


def _byte_offset(data: bytes, line: int, column: int) -> int:
    offset = 0
    for _ in range(line - 1):
        nl = data.find(b"\n", offset)
        if nl < 0:
            break
        offset = nl + 1
    return offset + column


def _expand(paths: Iterable[str | Path]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.xml")))
        else:
            out.append(p)
    return out


@dataclass
class FileIngest:
    """Iterable over records in local oai_dc files.

    Each file may hold a single ``record``, any element wrapping several
    records, a full OAI-PMH response, or a bare ``oai_dc:dc`` element.
    Unreadable or malformed files land in ``failures``; the rest are still
    processed.
    """

    paths: list[str | Path]
    failures: list[ParseFailure] = field(default_factory=list)

    def __iter__(self) -> Iterator[RawRecord]:
        self.failures.clear()
        for path in _expand(self.paths):
            try:
                data = path.read_bytes()
            except OSError as exc:
                self.failures.append(ParseFailure(str(path), None, f"unreadable: {exc}"))
                continue
            try:
                root = ET.fromstring(data)
            except ET.ParseError as exc:
                line, col = exc.position
                offset = _byte_offset(data, line, col)
                logger.error("%s: XML parse error at byte %d: %s", path, offset, exc)
                self.failures.append(ParseFailure(str(path), offset, str(exc)))
                continue
            try:
                records = self._records(root, path)
            except MalformedResponse as exc:
                self.failures.append(ParseFailure(str(path), None, str(exc)))
                continue
            yield from records

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    @staticmethod
    def _records(root: ET.Element, path: Path) -> list[RawRecord]:
        if root.tag == "{%s}dc" % OAI_DC_NS:
            return [_record_from_bare_dc(root, path.stem)]
        if root.tag in (_OAI + "record", "record"):
            return [_record_from_element(root)]
        found = root.findall(".//" + _OAI + "record") or root.findall(".//record")
        return [_record_from_element(r) for r in found]


def ingest_files(paths: Iterable[str | Path]) -> FileIngest:
    return FileIngest(list(paths))
