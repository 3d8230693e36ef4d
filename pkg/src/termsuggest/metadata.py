"""Dublin Core (oai_dc) records and source/target field extraction."""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime

from .harvester import DC_NS, OAI_DC_NS, RawRecord

logger = logging.getLogger(__name__)

DC_ELEMENTS = (
    "title", "creator", "subject", "description", "publisher",
    "contributor", "date", "type", "format", "identifier",
    "source", "language", "relation", "coverage", "rights",
)
_XML_LANG = "{http://www.w3.org/XML/1998/namespace}lang"

ET.register_namespace("oai_dc", OAI_DC_NS)
ET.register_namespace("dc", DC_NS)


class MetadataError(ValueError):
    pass


# (value, language tag or None)
Value = tuple[str, "str | None"]


@dataclass(frozen=True)
class DublinCoreRecord:
    identifier: str
    datestamp: datetime
    deleted: bool = False
    elements: dict[str, list[Value]] = field(default_factory=dict)
    unknown_elements: int = 0

    def values(self, name: str) -> list[str]:
        return [v for v, _ in self.elements.get(name, ())]


@dataclass(frozen=True)
class FieldMapping:
    source_elements: tuple[str, ...] = ("title", "description")
    target_element: str = "subject"
    language_filter: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_elements", tuple(self.source_elements))
        if not self.source_elements:
            raise ValueError("source_elements must not be empty")
        for name in (*self.source_elements, self.target_element):
            if name not in DC_ELEMENTS:
                raise ValueError(f"{name!r} is not a Dublin Core element")
        if self.target_element in self.source_elements:
            raise ValueError("target_element must not also be a source element")

    def to_dict(self) -> dict:
        return {
            "source_elements": list(self.source_elements),
            "target_element": self.target_element,
            "language_filter": self.language_filter,
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> FieldMapping:
        return cls(**(data or {}))


@dataclass(frozen=True)
class FieldExtraction:
    doc_id: str
    source_texts: list[str]
    target_values: list[str]


def parse_oai_dc(raw: RawRecord) -> DublinCoreRecord:
    if raw.deleted:
        return DublinCoreRecord(raw.identifier, raw.datestamp, deleted=True)
    if not raw.metadata_xml:
        raise MetadataError(f"{raw.identifier}: no metadata")
    try:
        root = ET.fromstring(raw.metadata_xml)
    except ET.ParseError as exc:
        raise MetadataError(f"{raw.identifier}: malformed metadata XML: {exc}") from exc
    if root.tag != "{%s}dc" % OAI_DC_NS:
        container = root.find(".//{%s}dc" % OAI_DC_NS)
        if container is None:
            raise MetadataError(f"{raw.identifier}: missing oai_dc:dc container")
        root = container

    elements: dict[str, list[Value]] = {}
    unknown = 0
    prefix = "{%s}" % DC_NS
    for child in root:
        if not isinstance(child.tag, str):
            continue  # comments, processing instructions
        name = child.tag[len(prefix):] if child.tag.startswith(prefix) else None
        if name not in DC_ELEMENTS:
            unknown += 1
            continue
        value = (child.text or "").strip()
        if not value:
            continue
        elements.setdefault(name, []).append((value, child.get(_XML_LANG)))
    if unknown:
        logger.debug("%s: ignored %d non-DC elements", raw.identifier, unknown)
    return DublinCoreRecord(raw.identifier, raw.datestamp, False, elements, unknown)


def serialize_oai_dc(record: DublinCoreRecord) -> str:
    root = ET.Element("{%s}dc" % OAI_DC_NS)
    for name in DC_ELEMENTS:
        for value, lang in record.elements.get(name, ()):
            child = ET.SubElement(root, "{%s}%s" % (DC_NS, name))
            child.text = value
            if lang:
                child.set(_XML_LANG, lang)
    return ET.tostring(root, encoding="unicode")


def _lang_matches(tag: str | None, wanted: str) -> bool:
    if tag is None:
        return True
    tag, wanted = tag.lower(), wanted.lower()
    return tag == wanted or tag.startswith(wanted + "-")


def select_fields(record: DublinCoreRecord, mapping: FieldMapping | None = None) -> FieldExtraction:
    """Pull the source texts and target values named by ``mapping``.

    With a language filter, values tagged with another language are dropped;
    untagged values always pass. A filter of ``en`` also accepts ``en-GB``.
    """
    mapping = mapping or FieldMapping()
    lang = mapping.language_filter

    def pick(name: str) -> list[str]:
        vals = record.elements.get(name, ())
        return [v for v, tag in vals if lang is None or _lang_matches(tag, lang)]

    sources = [text for name in mapping.source_elements for text in pick(name)]
    return FieldExtraction(record.identifier, sources, pick(mapping.target_element))
