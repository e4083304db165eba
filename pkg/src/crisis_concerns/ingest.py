"""Parsing, cleaning, relevance filtering and geographic enrichment of posts.

Input posts are newline-delimited JSON objects with exactly the fields
``id, text, first_name, last_name, lon, lat, ts``.  Geography is a GeoJSON
FeatureCollection of (Multi)Polygons carrying ``fips`` and ``name``
properties; the socioeconomic table is a CSV keyed by 5-digit FIPS.
"""

from __future__ import annotations

import csv
import html
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, TextIO

from .errors import DataError, ValidationError

POST_FIELDS = ("id", "text", "first_name", "last_name", "lon", "lat", "ts")
MAX_TEXT_BYTES = 10_000
SUFFIXES = ("ing", "ed", "ly", "es", "s")
MIN_STEM = 3

_TAG_RE = re.compile(r"<[^>]*>")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_NON_ASCII_RE = re.compile(r"[^\x00-\x7f]")
_NON_TOKEN_RE = re.compile(r"[^a-z0-9']+")
_FIPS_RE = re.compile(r"^\d{5}$")


@dataclass(frozen=True)
class RawPost:
    id: str
    text: str
    author_first_name: str
    author_last_name: str
    longitude: float
    latitude: float
    timestamp: datetime


@dataclass(frozen=True)
class ParseError:
    line: int
    reason: str

    def to_dict(self):
        return {"line": self.line, "reason": self.reason}


@dataclass
class CleanPost:
    id: str
    normalized_text: str
    tokens: list
    geo_unit: Optional[str] = None
    relevant: bool = False


@dataclass(frozen=True)
class SocioProfile:
    per_capita_income: float
    pct_not_higher_ed_students: float
    low_income_flag: int

    def __post_init__(self):
        if not 0.0 <= self.pct_not_higher_ed_students <= 1.0:
            raise ValidationError("pct_not_higher_ed must lie in [0, 1]")
        if self.low_income_flag not in (0, 1):
            raise ValidationError("low_income_flag must be 0 or 1")


@dataclass
class GeoUnit:
    fips: str
    name: str
    # list of polygons; each polygon is a list of closed rings of (lon, lat)
    polygons: list
    socio: Optional[SocioProfile] = None
    bbox: tuple = field(init=False)

    def __post_init__(self):
        if not _FIPS_RE.match(self.fips):
            raise ValidationError(f"malformed fips {self.fips!r}")
        xs, ys = [], []
        for poly in self.polygons:
            for ring in poly:
                if len(ring) < 4 or tuple(ring[0]) != tuple(ring[-1]):
                    raise ValidationError(
                        f"unit {self.fips}: rings must be closed with >= 4 vertices"
                    )
                xs.extend(p[0] for p in ring)
                ys.extend(p[1] for p in ring)
        self.bbox = (min(xs), min(ys), max(xs), max(ys))

    def contains(self, lon: float, lat: float) -> bool:
        x0, y0, x1, y1 = self.bbox
        if not (x0 <= lon <= x1 and y0 <= lat <= y1):
            return False
        return any(point_in_polygon(lon, lat, poly) for poly in self.polygons)


# ---------------------------------------------------------------------------
# Posts


def _parse_timestamp(value: str) -> datetime:
    if not isinstance(value, str):
        raise ValueError("ts must be an RFC 3339 string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("ts lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    spec = "microseconds" if ts.microsecond else "seconds"
    return ts.replace(tzinfo=None).isoformat(timespec=spec) + "Z"


def _coerce_post(obj) -> RawPost:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    keys = set(obj)
    missing = [k for k in POST_FIELDS if k not in keys]
    if missing:
        raise ValueError("missing field(s): " + ", ".join(missing))
    extra = sorted(keys - set(POST_FIELDS))
    if extra:
        raise ValueError("unexpected field(s): " + ", ".join(extra))
    for key in ("id", "text", "first_name", "last_name"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{key} must be a string")
    if not obj["id"]:
        raise ValueError("empty id")
    if len(obj["text"].encode("utf-8")) > MAX_TEXT_BYTES:
        raise ValueError("text exceeds 10000 bytes")
    lon, lat = obj["lon"], obj["lat"]
    for key, val in (("lon", lon), ("lat", lat)):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ValueError(f"{key} must be a number")
    if not -180.0 <= lon <= 180.0:
        raise ValueError("longitude out of range")
    if not -90.0 <= lat <= 90.0:
        raise ValueError("latitude out of range")
    return RawPost(
        id=obj["id"],
        text=obj["text"],
        author_first_name=obj["first_name"],
        author_last_name=obj["last_name"],
        longitude=float(lon),
        latitude=float(lat),
        timestamp=_parse_timestamp(obj["ts"]),
    )


def iter_posts(stream: TextIO, errors: list) -> Iterator[RawPost]:
    """Yield posts lazily from an NDJSON stream.

    Malformed lines append a :class:`ParseError` to ``errors`` and are
    skipped.  Only the set of seen ids is retained, so memory does not grow
    with the text volume.
    """
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            post = _coerce_post(json.loads(line))
        except (ValueError, TypeError, OverflowError) as exc:
            errors.append(ParseError(lineno, str(exc)))
            continue
        if post.id in seen:
            errors.append(ParseError(lineno, f"duplicate id {post.id!r}"))
            continue
        seen.add(post.id)
        yield post


def parse_posts(stream: TextIO):
    """Parse an NDJSON stream into ``(posts, errors)``, preserving order."""
    errors: list = []
    posts = list(iter_posts(stream, errors))
    return posts, errors


def serialize_post(post: RawPost) -> str:
    return json.dumps(
        {
            "id": post.id,
            "text": post.text,
            "first_name": post.author_first_name,
            "last_name": post.author_last_name,
            "lon": post.longitude,
            "lat": post.latitude,
            "ts": format_timestamp(post.timestamp),
        },
        ensure_ascii=False,
    )


# ---------------------------------------------------------------------------
# Text cleaning


def load_word_list(path=None, name="stopwords.txt") -> frozenset:
    """Read a one-word-per-line list; ``#`` starts a comment."""
    if path is None:
        text = resources.files("crisis_concerns.data").joinpath(name).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.append(line)
    return frozenset(words)


def default_stopwords() -> frozenset:
    return load_word_list(name="stopwords.txt")


def lemmatize(token: str) -> str:
    """Strip the first matching suffix that leaves a stem of >= 3 chars."""
    for suffix in SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= MIN_STEM:
            return token[: -len(suffix)]
    return token


def normalize_text(text: str) -> str:
    text = _TAG_RE.sub(" ", text)
    text = html.unescape(text)
    # decoding can reintroduce markup such as "&lt;b&gt;"
    text = _TAG_RE.sub(" ", text)
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = _NON_ASCII_RE.sub(" ", text)
    text = text.lower()
    text = _NON_TOKEN_RE.sub(" ", text)
    words = [w.strip("'") for w in text.split()]
    return " ".join(w for w in words if w)


def clean_text(text: str, stopwords: Iterable[str] = frozenset(), lemmatize_tokens: bool = True):
    """Return ``(normalized_text, tokens)`` for a raw post body.

    ``normalized_text`` is the markup-free, lowercased word sequence before
    stopword removal and lemmatization, so feeding it back in reproduces both
    outputs exactly.
    """
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)
    normalized = normalize_text(text)
    tokens = []
    for word in normalized.split():
        if word in stop:
            continue
        if lemmatize_tokens:
            word = lemmatize(word)
            if word in stop:
                continue
        tokens.append(word)
    return normalized, tokens


# ---------------------------------------------------------------------------
# Relevance


def compile_rules(rules: Sequence[str], lemmatize_tokens: bool = True) -> list:
    """Normalize keyword/phrase rules into token tuples matching cleaned tokens."""
    compiled = []
    for rule in rules:
        words = normalize_text(rule).split()
        if lemmatize_tokens:
            words = [lemmatize(w) for w in words]
        if words:
            compiled.append(tuple(words))
    return compiled


def relevance_filter(tokens: Sequence[str], rules) -> bool:
    """True iff any rule matches a token (single word) or a consecutive run.

    ``rules`` may be raw strings or the output of :func:`compile_rules`.
    """
    if not rules:
        raise ValueError("relevance rules must be non-empty")
    if isinstance(rules[0], str):
        rules = compile_rules(rules)
    toks = [t.lower() for t in tokens]
    vocab = set(toks)
    for rule in rules:
        if len(rule) == 1:
            if rule[0] in vocab:
                return True
            continue
        if rule[0] not in vocab:
            continue
        n = len(rule)
        for i in range(len(toks) - n + 1):
            if tuple(toks[i : i + n]) == rule:
                return True
    return False


def default_relevance_rules() -> list:
    text = resources.files("crisis_concerns.data").joinpath("relevance_rules.txt").read_text("utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


# ---------------------------------------------------------------------------
# Geography


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def point_in_polygon(x: float, y: float, rings: Sequence[Sequence]) -> bool:
    """Even-odd ray casting over all rings of one polygon (holes included).

    Points on any edge or vertex are reported inside.
    """
    inside = False
    for ring in rings:
        n = len(ring)
        for i in range(n - 1):
            ax, ay = ring[i][0], ring[i][1]
            bx, by = ring[i + 1][0], ring[i + 1][1]
            if _on_segment(x, y, ax, ay, bx, by):
                return True
            # half-open in y so shared vertices are counted once
            if (ay > y) != (by > y):
                xint = ax + (y - ay) * (bx - ax) / (by - ay)
                if x < xint:
                    inside = not inside
    return inside


def assign_geography(lon: float, lat: float, units: Sequence[GeoUnit]) -> Optional[str]:
    """FIPS of the first unit in file order containing the point, else None."""
    for unit in units:
        if unit.contains(lon, lat):
            return unit.fips
    return None


def _close(ring):
    ring = [tuple(float(c) for c in p[:2]) for p in ring]
    if ring and ring[0] != ring[-1]:
        ring.append(ring[0])
    return ring


def load_geography(path) -> list:
    """Load GeoUnits from a GeoJSON FeatureCollection (file order kept)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    units = []
    seen = set()
    for idx, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        fips = str(props.get("fips", ""))
        if fips in seen:
            raise DataError(f"duplicate fips {fips} in geography file")
        seen.add(fips)
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            polys = geom["coordinates"]
        else:
            raise DataError(f"feature {idx}: unsupported geometry {gtype!r}")
        polygons = [[_close(r) for r in poly] for poly in polys]
        try:
            units.append(GeoUnit(fips=fips, name=str(props.get("name", "")), polygons=polygons))
        except ValidationError as exc:
            raise DataError(f"feature {idx}: {exc}") from exc
    return units


SOCIO_HEADER = ["fips", "per_capita_income", "pct_not_higher_ed", "low_income_flag"]


def load_socio_table(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SOCIO_HEADER:
            raise DataError(f"socio table header must be {','.join(SOCIO_HEADER)}")
        table = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                fips = row[0].strip()
                if not _FIPS_RE.match(fips):
                    raise ValidationError(f"malformed fips {fips!r}")
                table[fips] = SocioProfile(float(row[1]), float(row[2]), int(row[3]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"socio table line {lineno}: {exc}") from exc
    return table


def join_socioeconomics(fips: str, table: Mapping[str, SocioProfile]) -> Optional[SocioProfile]:
    """Exact-key lookup; an absent county returns None, never a default."""
    if not isinstance(fips, str) or not _FIPS_RE.match(fips):
        raise ValidationError(f"malformed fips {fips!r}: expected 5 digits")
    return table.get(fips)
