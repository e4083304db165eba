"""Regenerate the bundled fixture corpus under src/crisis_concerns/data/.

Raw inputs (public-domain Census files and the MIT-licensed VADER lexicon)
are read from RAW_DIR:

    dist.male.first, dist.female.first   1990 Census first-name frequencies
    census_2010.csv                      2010 Census surname table
    vader_lexicon.txt                    VADER sentiment lexicon

Usage: python scripts/build_fixtures.py [RAW_DIR]
"""

from __future__ import annotations

import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from crisis_concerns.ingest import point_in_polygon  # noqa: E402
DATA = ROOT / "src" / "crisis_concerns" / "data"
FIX = DATA / "fixture"
SEED = 20230607

ALPHA = "abcdefghijklmnopqrstuvwxyz"


def vec(name):
    return tuple(name.count(c) for c in ALPHA)


def read_first(path):
    out = {}
    for line in open(path):
        parts = line.split()
        if len(parts) >= 2:
            out[parts[0].lower()] = int(round(float(parts[1]) * 10000))
    return out


def drop_conflicts(pairs):
    labels = defaultdict(set)
    for name, lab in pairs:
        labels[vec(name)].add(lab)
    return [(n, l) for n, l in pairs if len(labels[vec(n)]) == 1]


def build_names(raw, rng):
    male = read_first(raw / "dist.male.first")
    female = read_first(raw / "dist.female.first")
    labeled = []
    for name in sorted(set(male) | set(female)):
        m, f = male.get(name, 0), female.get(name, 0)
        if m != f and name.isalpha():
            labeled.append((name, "M" if m > f else "F"))
    labeled = drop_conflicts(labeled)
    chosen = []
    for sex in ("M", "F"):
        pool = [n for n, l in labeled if l == sex]
        pick = rng.choice(len(pool), size=1000, replace=False)
        chosen.extend(pool[i] for i in sorted(pick))
    with open(FIX / "ssa_names.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "sex", "count"])
        for name in chosen:
            # both-sex names keep both rows so the majority rule is exercised
            for sex, table in (("F", female), ("M", male)):
                if name in table and table[name] > 0:
                    w.writerow([name.capitalize(), sex, table[name]])

    cols = {"Asian": "pctapi", "Black": "pctblack", "Hispanic": "pcthispanic", "White": "pctwhite"}
    order = ("Asian", "Black", "Hispanic", "White")
    rows = {}
    by_class = defaultdict(list)
    with open(raw / "census_2010.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["name"].lower()
            if not name.isalpha():
                continue
            pct = [float(row[cols[c]]) if row[cols[c]] not in ("", "(S)") else 0.0 for c in order]
            lab = order[int(np.argmax(pct))]
            rows[name] = row
            by_class[lab].append(name)
    pairs = []
    for lab in order:
        # frequent surnames only: the head of the table carries the race signal
        pool = by_class[lab][:4000]
        pick = rng.choice(len(pool), size=min(600, len(pool)), replace=False)
        pairs.extend((pool[i], lab) for i in sorted(pick))
    pairs = drop_conflicts(pairs)
    final = []
    for lab in order:
        final.extend([p for p in pairs if p[1] == lab][:500])
    with open(FIX / "census_surnames.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "rank", "count", "pct_white", "pct_black", "pct_api", "pct_hispanic"])
        for name, _ in final:
            r = rows[name]
            w.writerow([r["name"], r["rank"], r["count"], r["pctwhite"], r["pctblack"], r["pctapi"], r["pcthispanic"]])
    return chosen, [n for n, _ in final]


def build_lexicon(raw):
    entries = []
    for line in open(raw / "vader_lexicon.txt", encoding="utf-8"):
        parts = line.rstrip("\n").split("\t")
        word, mean = parts[0], float(parts[1])
        if word.isalpha() and word.islower() and abs(mean) >= 1.0:
            entries.append((word, mean))
    # drop inflected variants of a listed word, then keep the shortest words
    words = {w for w, _ in entries}
    entries = [e for e in entries if not any(e[0][:k] in words for k in range(3, len(e[0])))]
    entries.sort(key=lambda e: (len(e[0]), e[0]))
    entries = sorted(entries[:2000])
    with open(DATA / "lexicon.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["word", "weight"])
        for word, mean in entries:
            w.writerow([word, f"{mean / 2.0:.4f}"])


CATEGORIES = {
    "CommutingToWork": [
        "the subway to work was packed with smoke",
        "my commute to the office was awful in this haze",
        "still have to commute to work through the smoke",
        "boss wants everyone in the office despite the air quality",
        "train to work delayed and the platform smells like fire",
        "wearing a mask on the bus to my job this morning",
    ],
    "SchoolTrips": [
        "school canceled outdoor recess because of the smoke",
        "kids walked to school in the orange haze",
        "the school trip to the museum got postponed due to air quality",
        "picking up my son from school early because of the smoke",
        "class moved indoors as the wildfire haze got worse",
        "church youth trip canceled due to the wildfire smoke",
    ],
    "ShoppingErrands": [
        "went to the grocery store to buy masks before the smoke",
        "stores sold out of air purifiers in this haze",
        "quick errand to the pharmacy store and the smoke burned my eyes",
        "shopping for n95 masks because of the wildfire",
        "grocery run in the haze was a bad idea",
        "stocking up at the store in case the air quality gets worse",
    ],
    "SocialRecreational": [
        "the concert in the park got canceled because of the smoke",
        "yankees game postponed due to air quality",
        "no outdoor run today the haze is too thick",
        "beach plans ruined by the wildfire smoke",
        "broadway show still on despite the smoke outside",
        "dinner with friends moved indoors because of the haze",
    ],
    "MedicalDental": [
        "had to see the doctor my asthma is flaring in this smoke",
        "hospital er is busy with people who cannot breathe the smoke",
        "dentist appointment canceled because of the air quality",
        "clinic says stay inside if you have asthma during the haze",
        "my chest hurts from the smoke heading to the clinic",
        "took grandma to the hospital the smoke made her sick",
    ],
    "Evacuation": [
        "thinking about leaving the city until the smoke clears",
        "should we evacuate the air quality is terrible",
        "evacuation from the fire zone in canada is heartbreaking",
        "driving upstate to escape the wildfire smoke",
        "friends are evacuating their homes from the fire",
        "evacuate now the fire smoke is dangerous",
    ],
    "OtherPurposes": [
        "flight delayed at the airport because of the haze",
        "traffic is crawling on the bridge in the smoke",
        "airport flights grounded due to wildfire smoke visibility",
        "dog walk cut short by the orange smoke",
        "the traffic on the highway is slow because of the haze",
        "drove to the airport through the thick smoke",
    ],
    "NonTravelStayHome": [
        "staying home today the air quality is awful",
        "working from home to avoid the wildfire smoke",
        "we are staying inside with the windows shut because of smoke",
        "stay home the haze is hazardous",
        "not leaving the apartment until the smoke clears",
        "indoors all day with the air purifier running because of the fire",
    ],
}

OPENERS = ["", "ugh ", "honestly ", "wow ", "so ", "today ", "update: ", "omg "]
CLOSERS = ["", " so sad", " this is scary", " #nycsmoke", " stay safe", " terrible day", " great job nyc", " love this city", " not good", " 😷"]

IRRELEVANT = [
    "coffee with friends this morning was great",
    "new album drops tonight can't wait",
    "happy birthday to my best friend",
    "just finished a good book",
    "pizza night with the family",
    "learning to play guitar is hard",
    "watching the finale tonight",
    "my cat is sleeping on my laptop",
]

COUNTIES = [
    ("36005", "Bronx", [(-73.905, 40.805), (-73.76, 40.805), (-73.76, 40.92), (-73.905, 40.92)]),
    ("36047", "Kings", [(-74.04, 40.57), (-73.91, 40.57), (-73.91, 40.65), (-73.95, 40.695), (-74.04, 40.695)]),
    ("36061", "New York", [(-74.02, 40.70), (-73.91, 40.70), (-73.91, 40.88), (-74.02, 40.88)]),
    ("36081", "Queens", [(-73.90, 40.54), (-73.70, 40.54), (-73.70, 40.80), (-73.90, 40.80)]),
    ("36085", "Richmond", [(-74.26, 40.50), (-74.05, 40.50), (-74.05, 40.65), (-74.26, 40.65)]),
]
SOCIO = {
    "36005": (25000, 0.71, 1),
    "36047": (34000, 0.62, 1),
    "36061": (78000, 0.41, 0),
    "36081": (36000, 0.58, 0),
    "36085": (42000, 0.55, 0),
}


def make_text(rng, base):
    return OPENERS[rng.integers(len(OPENERS))] + base + CLOSERS[rng.integers(len(CLOSERS))]


def build_text_data(rng, first_names, surnames):
    labels = list(CATEGORIES)
    with open(FIX / "labeled_tweets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "text", "label"])
        k = 0
        for label in labels:
            for j in range(30):
                base = CATEGORIES[label][j % len(CATEGORIES[label])]
                w.writerow([f"L{k:04d}", make_text(rng, base), label])
                k += 1

    # skew toward evacuation / stay-home / commute, as observed in the source study
    weights = np.array([0.15, 0.08, 0.07, 0.12, 0.06, 0.26, 0.08, 0.18])
    gf = [n.capitalize() for n in first_names]
    sn = [n.capitalize() for n in surnames]
    posts = []
    for i in range(200):
        if i % 5 == 4:
            text = IRRELEVANT[rng.integers(len(IRRELEVANT))]
        else:
            label = labels[rng.choice(8, p=weights)]
            text = make_text(rng, CATEGORIES[label][rng.integers(6)])
        if i % 23 == 0:
            text = "<b>" + text + "</b> https://t.co/x" + str(i) + " @nycmayor"
        fips, _, ring = COUNTIES[rng.integers(len(COUNTIES))]
        xs = [p[0] for p in ring]
        ys = [p[1] for p in ring]
        closed = [ring + [ring[0]]]
        while True:
            lon = round(float(rng.uniform(min(xs) + 0.01, max(xs) - 0.01)), 6)
            lat = round(float(rng.uniform(min(ys) + 0.01, max(ys) - 0.01)), 6)
            if point_in_polygon(lon, lat, closed):
                break
        if i % 17 == 3:
            lon, lat = -74.17, 40.73  # Newark, outside every county
        first = gf[rng.integers(len(gf))]
        last = sn[rng.integers(len(sn))]
        if i == 57:
            first = "🔥🔥"
        day = 2 + i % 8
        posts.append({
            "id": f"P{i:04d}",
            "text": text,
            "first_name": first,
            "last_name": last,
            "lon": lon,
            "lat": lat,
            "ts": f"2023-06-{day:02d}T{(i * 7) % 24:02d}:{(i * 13) % 60:02d}:00Z",
        })
    with open(FIX / "posts.jsonl", "w", encoding="utf-8") as fh:
        for p in posts:
            fh.write(json.dumps(p, ensure_ascii=False) + "\n")

    feats = []
    for fips, name, ring in COUNTIES:
        ring = [list(p) for p in ring] + [list(ring[0])]
        feats.append({
            "type": "Feature",
            "properties": {"fips": fips, "name": name},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    with open(FIX / "geography.geojson", "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, indent=1)
    with open(FIX / "socio.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "per_capita_income", "pct_not_higher_ed", "low_income_flag"])
        for fips, (inc, pct, flag) in SOCIO.items():
            w.writerow([fips, inc, pct, flag])


def main(raw):
    FIX.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    first, last = build_names(raw, rng)
    build_lexicon(raw)
    build_text_data(rng, first, last)


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "/root/raw"))
