from datetime import datetime, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oai_mock import dc_xml

from termsuggest.harvester import RawRecord
from termsuggest.metadata import (
    DC_ELEMENTS,
    DublinCoreRecord,
    FieldMapping,
    MetadataError,
    parse_oai_dc,
    select_fields,
    serialize_oai_dc,
)

STAMP = datetime(2012, 1, 1, tzinfo=timezone.utc)


def raw(dc: dict, ident="oai:x:1") -> RawRecord:
    return RawRecord(ident, STAMP, False, dc_xml(dc))


def test_parse_keeps_order_and_multiplicity():
    rec = parse_oai_dc(raw({"title": ["First", "Second"], "subject": ["a", "b", "c"]}))
    assert rec.values("title") == ["First", "Second"]
    assert rec.values("subject") == ["a", "b", "c"]


def test_parse_deleted():
    rec = parse_oai_dc(RawRecord("oai:x:2", STAMP, deleted=True))
    assert rec.deleted and rec.elements == {}


def test_parse_language_tag():
    rec = parse_oai_dc(raw({"subject": [("Arbeitsmarkt", "de"), ("labor market", "en")]}))
    assert rec.elements["subject"] == [("Arbeitsmarkt", "de"), ("labor market", "en")]


def test_unknown_elements_counted():
    xml = ('<oai_dc:dc xmlns:oai_dc="http://www.openarchives.org/OAI/2.0/oai_dc/" '
           'xmlns:dc="http://purl.org/dc/elements/1.1/" xmlns:x="urn:x">'
           "<dc:title>T</dc:title><x:extra>e</x:extra><dc:audience>kids</dc:audience></oai_dc:dc>")
    rec = parse_oai_dc(RawRecord("id", STAMP, False, xml))
    assert rec.unknown_elements == 2
    assert rec.values("title") == ["T"]


def test_blank_values_dropped():
    rec = parse_oai_dc(raw({"subject": ["  ", "ok"]}))
    assert rec.values("subject") == ["ok"]


def test_parse_errors():
    with pytest.raises(MetadataError):
        parse_oai_dc(RawRecord("id", STAMP, False, "<broken"))
    with pytest.raises(MetadataError):
        parse_oai_dc(RawRecord("id", STAMP, False, "<other/>"))
    with pytest.raises(MetadataError):
        parse_oai_dc(RawRecord("id", STAMP, False, None))


def test_select_default_mapping():
    rec = parse_oai_dc(raw({
        "title": ["Youth unemployment in Europe"],
        "description": ["A study of labor market effects"],
        "subject": ["labor market", "adolescent"],
    }))
    ex = select_fields(rec)
    assert ex.source_texts == ["Youth unemployment in Europe", "A study of labor market effects"]
    assert ex.target_values == ["labor market", "adolescent"]
    assert ex.doc_id == "oai:x:1"


def test_select_missing_target():
    assert select_fields(parse_oai_dc(raw({"title": ["t"]}))).target_values == []


def test_select_year_as_target():
    rec = parse_oai_dc(raw({"title": ["Trends"], "date": ["2012"]}))
    ex = select_fields(rec, FieldMapping(("title",), "date"))
    assert ex.target_values == ["2012"]


def test_language_filter_keeps_untagged():
    rec = parse_oai_dc(raw({"subject": [("Arbeitsmarkt", "de"), ("labor market", "en-GB"), "plain"]}))
    ex = select_fields(rec, FieldMapping(language_filter="en"))
    assert ex.target_values == ["labor market", "plain"]


@pytest.mark.parametrize("kwargs", [
    {"source_elements": ("title", "subject")},
    {"source_elements": ()},
    {"target_element": "keywords"},
])
def test_mapping_invariants(kwargs):
    with pytest.raises(ValueError):
        FieldMapping(**kwargs)


def test_mapping_defaults():
    m = FieldMapping()
    assert m.source_elements == ("title", "description") and m.target_element == "subject"


value_st = st.text(alphabet=st.characters(whitelist_categories=("L", "N", "Zs")), min_size=1, max_size=12).map(
    str.strip).filter(bool)
elements_st = st.dictionaries(
    st.sampled_from(DC_ELEMENTS),
    st.lists(st.tuples(value_st, st.sampled_from([None, "en", "de"])), min_size=1, max_size=3),
    max_size=5,
)


@given(elements_st)
def test_serialize_parse_round_trip(elements):
    rec = DublinCoreRecord("id", STAMP, False, elements)
    back = parse_oai_dc(RawRecord("id", STAMP, False, serialize_oai_dc(rec)))
    assert back.elements == elements


@given(elements_st, st.sampled_from([None, "en", "de"]))
def test_select_never_invents_targets(elements, lang):
    rec = DublinCoreRecord("id", STAMP, False, elements)
    ex = select_fields(rec, FieldMapping(language_filter=lang))
    assert set(ex.target_values) <= set(rec.values("subject"))


@given(elements_st, st.sampled_from(["en", "de", "fr"]))
def test_filter_is_noop_without_tags(elements, lang):
    untagged = {k: [(v, None) for v, _ in vals] for k, vals in elements.items()}
    rec = DublinCoreRecord("id", STAMP, False, untagged)
    assert select_fields(rec, FieldMapping(language_filter=lang)) == select_fields(rec)
