import io
import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisis_concerns.errors import DataError, ValidationError
from crisis_concerns.ingest import (
    GeoUnit,
    RawPost,
    SocioProfile,
    assign_geography,
    clean_text,
    compile_rules,
    default_relevance_rules,
    default_stopwords,
    join_socioeconomics,
    lemmatize,
    load_geography,
    load_socio_table,
    parse_posts,
    point_in_polygon,
    relevance_filter,
    serialize_post,
)

from conftest import fixture_file


def _line(**kw):
    rec = {
        "id": "p1",
        "text": "smoke over the river",
        "first_name": "Ana",
        "last_name": "Lee",
        "lon": -73.9,
        "lat": 40.7,
        "ts": "2023-06-07T12:00:00Z",
    }
    rec.update(kw)
    return json.dumps(rec)


def test_three_good_lines():
    text = "\n".join(_line(id=f"p{i}") for i in range(3))
    posts, errors = parse_posts(io.StringIO(text))
    assert [p.id for p in posts] == ["p0", "p1", "p2"]
    assert errors == []


def test_latitude_out_of_range():
    posts, errors = parse_posts(io.StringIO(_line(lat=95.0)))
    assert posts == []
    assert len(errors) == 1
    assert errors[0].line == 1
    assert "latitude out of range" in errors[0].reason


def test_malformed_lines_do_not_abort():
    text = "\n".join([_line(id="a"), "{not json", _line(id="b", lon=200), _line(id="a"), _line(id="c")])
    posts, errors = parse_posts(io.StringIO(text))
    assert [p.id for p in posts] == ["a", "c"]
    assert [e.line for e in errors] == [2, 3, 4]
    assert "duplicate" in errors[2].reason


def test_exact_field_set():
    rec = json.loads(_line())
    rec["extra"] = 1
    _, errors = parse_posts(io.StringIO(json.dumps(rec)))
    assert len(errors) == 1
    del rec["extra"], rec["ts"]
    _, errors = parse_posts(io.StringIO(json.dumps(rec)))
    assert len(errors) == 1


def test_text_byte_limit():
    _, errors = parse_posts(io.StringIO(_line(text="é" * 5001)))
    assert len(errors) == 1


printable = st.text(st.characters(blacklist_categories=("Cs",)), max_size=80)


@settings(max_examples=150, deadline=None)
@given(
    pid=st.text(min_size=1, max_size=12).filter(lambda s: s.strip() == s and s),
    text=printable,
    first=printable,
    last=printable,
    lon=st.floats(-180, 180),
    lat=st.floats(-90, 90),
    ts=st.datetimes(min_value=datetime(1970, 1, 2), max_value=datetime(2100, 1, 1)),
)
def test_serialize_parse_round_trip(pid, text, first, last, lon, lat, ts):
    post = RawPost(pid, text, first, last, lon, lat, ts.replace(tzinfo=timezone.utc))
    posts, errors = parse_posts(io.StringIO(serialize_post(post) + "\n"))
    assert errors == []
    assert posts == [post]


def test_clean_text_example():
    normalized, tokens = clean_text("Smoke!!! <b>bad</b> air https://x.co 😷", set())
    assert tokens == ["smoke", "bad", "air"]
    assert normalized == "smoke bad air"


def test_clean_text_empty():
    assert clean_text("", default_stopwords()) == ("", [])


def test_suffix_rules():
    assert clean_text("running runs", set())[1] == ["runn", "run"]
    assert lemmatize("sky") == "sky"
    assert lemmatize("fly") == "fly"  # "-ly" would leave a 1-char stem
    assert lemmatize("boxes") == "box"


def test_noise_removed():
    text = "&lt;b&gt;Hi&lt;/b&gt; @mayor see www.site.org &amp; café 🔥 it's"
    normalized, tokens = clean_text(text, set(), lemmatize_tokens=False)
    assert normalized == "hi see caf it's"
    assert "@" not in normalized and "&" not in normalized
    assert all(set(t) <= set("abcdefghijklmnopqrstuvwxyz0123456789'") for t in tokens)


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_clean_text_idempotent(text):
    stop = default_stopwords()
    normalized, tokens = clean_text(text, stop)
    assert clean_text(normalized, stop) == (normalized, tokens)
    assert all(t and t not in stop for t in tokens)


def test_relevance_examples():
    assert relevance_filter(["wildfire", "smoke"], ["wildfire"])
    assert not relevance_filter(["coffee", "morning"], ["wildfire", "evacuate"])
    assert relevance_filter(["air", "quality", "alert"], ["air quality"])
    assert not relevance_filter(["quality", "air"], ["air quality"])
    assert relevance_filter(["WILDFIRE"], ["wildfire"])


def test_relevance_needs_rules():
    with pytest.raises(ValueError):
        relevance_filter(["x"], [])


def test_rules_match_cleaned_tokens():
    _, tokens = clean_text("Evacuating now because of the fires", default_stopwords())
    assert relevance_filter(tokens, compile_rules(["evacuating"]))
    assert relevance_filter(tokens, compile_rules(default_relevance_rules()))


word = st.sampled_from(["air", "quality", "smoke", "fire", "school", "bus", "stay", "home"])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(word, max_size=8),
    st.lists(st.lists(word, min_size=1, max_size=2).map(" ".join), min_size=1, max_size=3),
    st.lists(st.lists(word, min_size=1, max_size=2).map(" ".join), min_size=1, max_size=3),
)
def test_relevance_union(tokens, r1, r2):
    assert relevance_filter(tokens, r1 + r2) == (relevance_filter(tokens, r1) or relevance_filter(tokens, r2))


SQUARE = [[(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]]


def test_point_in_square():
    assert point_in_polygon(0.5, 0.5, SQUARE)
    assert not point_in_polygon(2, 2, SQUARE)
    assert point_in_polygon(0.5, 0.0, SQUARE)
    assert point_in_polygon(1.0, 1.0, SQUARE)


def test_hole_is_outside():
    outer = [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]
    hole = [(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)]
    assert not point_in_polygon(2, 2, [outer, hole])
    assert point_in_polygon(0.5, 2, [outer, hole])


def test_first_unit_wins():
    a = GeoUnit("00001", "a", [SQUARE])
    b = GeoUnit("00002", "b", [SQUARE])
    assert assign_geography(0.5, 0.5, [a, b]) == "00001"
    assert assign_geography(5, 5, [a, b]) is None


def test_ring_must_be_closed():
    with pytest.raises(ValidationError):
        GeoUnit("00001", "a", [[[(0, 0), (1, 0), (1, 1), (0, 1)]]])


# star-shaped random polygons are simple; vertex rotation must not matter
@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.2, 1.0), min_size=3, max_size=9),
    st.integers(0, 8),
    st.floats(-1.2, 1.2),
    st.floats(-1.2, 1.2),
)
def test_ray_cast_rotation_invariant(radii, shift, px, py):
    import math

    n = len(radii)
    ring = [(r * math.cos(2 * math.pi * i / n), r * math.sin(2 * math.pi * i / n)) for i, r in enumerate(radii)]
    k = shift % n
    rotated = ring[k:] + ring[:k]
    assert point_in_polygon(px, py, [ring + ring[:1]]) == point_in_polygon(px, py, [rotated + rotated[:1]])


def test_socio_join():
    table = load_socio_table(fixture_file("socio.csv"))
    prof = join_socioeconomics("36061", table)
    assert isinstance(prof, SocioProfile) and prof.low_income_flag == 0
    assert join_socioeconomics("99999", table) is None
    with pytest.raises(ValidationError):
        join_socioeconomics("3606", table)


def test_socio_profile_ranges():
    with pytest.raises(ValidationError):
        SocioProfile(1.0, 1.5, 0)
    with pytest.raises(ValidationError):
        SocioProfile(1.0, 0.5, 2)


def test_fixture_geography():
    units = load_geography(fixture_file("geography.geojson"))
    assert [u.fips for u in units] == ["36005", "36047", "36061", "36081", "36085"]
    assert assign_geography(-73.97, 40.78, units) == "36061"  # Central Park
    assert assign_geography(-74.17, 40.73, units) is None  # Newark


def test_duplicate_fips_rejected(tmp_path):
    feat = {
        "type": "Feature",
        "properties": {"fips": "00001", "name": "x"},
        "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]},
    }
    p = tmp_path / "g.geojson"
    p.write_text(json.dumps({"type": "FeatureCollection", "features": [feat, feat]}))
    with pytest.raises(DataError):
        load_geography(p)
