"""Pipeline stages over newline-delimited JSON intermediates.

Each stage reads only files written by earlier stages (or configured inputs)
and records a summary under ``intermediate/stage_<name>.json``.  The report
stage assembles the six-file bundle.  Running the stages one by one gives the
same bytes as :func:`run_pipeline`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..activity.labels import ACTIVITY_LABELS
from ..activity.training import (
    ActivityModel,
    classify_corpus,
    distribution_table,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
)
from ..activity.vocab import build_vocab, tokenize
from ..choice.model import (
    ChoiceObservation,
    MNLEstimate,
    UtilitySpec,
    design,
    estimate,
    write_choice_csv,
)
from ..choice.report import emit_csv, emit_text, report_table
from ..errors import DataError, DependencyError, PipelineError
from ..ingest import (
    assign_geography,
    clean_text,
    compile_rules,
    default_relevance_rules,
    join_socioeconomics,
    load_geography,
    load_socio_table,
    load_word_list,
    parse_posts,
    relevance_filter,
)
from ..names import NameClassifier, evaluate, kfold_cv, load_dataset, split_dataset, train
from ..rng import derive_seed
from ..sentiment import SENTIMENT_CLASSES, Lexicon, aggregate_matrix, read_lexicon_csv, score_post
from .config import PipelineConfig

log = logging.getLogger("crisis_concerns.pipeline")

STAGES = (
    "ingest",
    "train-names",
    "infer-demo",
    "train-activity",
    "classify",
    "sentiment",
    "estimate",
    "report",
)
REPORT_FILES = (
    "county_counts.csv",
    "name_model_metrics.csv",
    "category_distribution.csv",
    "sentiment_matrix.csv",
    "mnl_table.csv",
    "mnl_table.txt",
    "run_manifest.json",
)
MNL_VARIABLES = ("female", "race_asian", "race_black", "race_hispanic", "low_income")
MANIFEST_FORMAT = "crisis_concerns.run_manifest/1"


# ---------------------------------------------------------------------------
# File helpers


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_text(path, text: str):
    _atomic_write(Path(path), text.encode("utf-8"))


def write_json(path, obj):
    write_text(path, json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def write_ndjson(path, records):
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
    write_text(path, "".join(ln + "\n" for ln in lines))


def read_ndjson(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _f(x, nd=6) -> str:
    return "" if x is None else f"{x:.{nd}f}"


# ---------------------------------------------------------------------------
# Workspace layout


@dataclass
class Workspace:
    root: Path

    @property
    def intermediate(self) -> Path:
        return self.root / "intermediate"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def stage_record(self, stage) -> Path:
        return self.intermediate / f"stage_{stage.replace('-', '_')}.json"

    # file -> producing subcommand
    def products(self):
        i, m = self.intermediate, self.models
        return {
            i / "posts.ndjson": "ingest",
            i / "parse_errors.ndjson": "ingest",
            i / "name_metrics.ndjson": "train-names",
            m / "gender.json": "train-names",
            m / "race.json": "train-names",
            i / "demographics.ndjson": "infer-demo",
            m / "activity.ckpt": "train-activity",
            i / "activity_training.ndjson": "train-activity",
            i / "activity.ndjson": "classify",
            i / "sentiment.ndjson": "sentiment",
            i / "choice_data.csv": "estimate",
            i / "mnl_estimate.json": "estimate",
        }

    def require(self, *paths):
        prod = self.products()
        for p in paths:
            if not Path(p).exists():
                producer = prod.get(Path(p), "?")
                raise DependencyError(
                    f"missing intermediate {Path(p).relative_to(self.root)}; run `{producer}` first",
                    producers=[producer],
                )


def fingerprint(cfg: PipelineConfig) -> str:
    """Digest of the canonical config plus the content of every input."""
    h = hashlib.sha256(cfg.digest().encode("ascii"))
    for key, path in sorted(cfg.input_paths().items()):
        h.update(f"{key}:{sha256_file(path)}".encode("ascii"))
    return h.hexdigest()


def _record(ws: Workspace, cfg: PipelineConfig, stage: str, counts: dict):
    write_json(ws.stage_record(stage), {"stage": stage, "fingerprint": fingerprint(cfg), "counts": counts})
    log.info("stage complete", extra={"stage": stage, "counts": counts})


def stage_is_current(ws: Workspace, cfg: PipelineConfig, stage: str) -> bool:
    p = ws.stage_record(stage)
    if not p.exists():
        return False
    rec = json.loads(p.read_text("utf-8"))
    if rec.get("fingerprint") != fingerprint(cfg):
        return False
    outputs = [f for f, s in ws.products().items() if s == stage]
    return all(f.exists() for f in outputs)


# ---------------------------------------------------------------------------
# Stages


def _cleaning_resources(cfg: PipelineConfig):
    stop_path = cfg.input_path("stopwords")
    neg_path = cfg.input_path("negators")
    stopwords = load_word_list(stop_path) if stop_path else load_word_list(name="stopwords.txt")
    listed = cfg.values["sentiment"]["negators"]
    if listed is not None:
        negators = frozenset(w.lower() for w in listed)
    elif neg_path:
        negators = load_word_list(neg_path)
    else:
        negators = load_word_list(name="negators.txt")
    return stopwords, negators


def _relevance_rules(cfg: PipelineConfig):
    lem = cfg.values["cleaning"]["lemmatize"]
    rules = cfg.values["cleaning"]["relevance_rules"]
    if rules is None:
        p = cfg.input_path("relevance_rules")
        rules = sorted(load_word_list(p)) if p else default_relevance_rules()
    compiled = compile_rules(rules, lemmatize_tokens=lem)
    if not compiled:
        raise DataError("relevance rule list is empty")
    return compiled


def run_ingest(cfg: PipelineConfig, ws: Workspace) -> dict:
    stopwords, negators = _cleaning_resources(cfg)
    lem = cfg.values["cleaning"]["lemmatize"]
    rules = _relevance_rules(cfg)
    units = load_geography(cfg.input_path("geography"))
    with open(cfg.input_path("posts"), encoding="utf-8") as fh:
        posts, errors = parse_posts(fh)
    sent_stop = stopwords - negators
    records = []
    for p in posts:
        normalized, tokens = clean_text(p.text, stopwords, lem)
        _, sent_tokens = clean_text(p.text, sent_stop, lemmatize_tokens=False)
        records.append(
            {
                "id": p.id,
                "first_name": p.author_first_name,
                "last_name": p.author_last_name,
                "normalized_text": normalized,
                "tokens": tokens,
                "sentiment_tokens": sent_tokens,
                "geo_unit": assign_geography(p.longitude, p.latitude, units),
                "relevant": relevance_filter(tokens, rules),
            }
        )
    write_ndjson(ws.intermediate / "posts.ndjson", records)
    write_ndjson(ws.intermediate / "parse_errors.ndjson", [e.to_dict() for e in errors])
    assigned = sum(r["geo_unit"] is not None for r in records)
    relevant = sum(r["relevant"] for r in records)
    counts = {
        "parsed": len(records),
        "parse_errors": len(errors),
        "geo_assigned": assigned,
        "geo_unassigned": len(records) - assigned,
        "relevant": relevant,
        "irrelevant": len(records) - relevant,
    }
    _record(ws, cfg, "ingest", counts)
    return counts


def run_train_names(cfg: PipelineConfig, ws: Workspace) -> dict:
    ncfg = cfg.values["names"]
    sources = {"gender": cfg.input_path("ssa_names"), "race": cfg.input_path("census_surnames")}
    chosen = {"gender": ncfg["gender_algorithm"], "race": ncfg["race_algorithm"]}
    rows, counts = [], {}
    for task in ("gender", "race"):
        ds = load_dataset(task, sources[task])
        counts[f"{task}_names"] = len(ds)
        algos = list(dict.fromkeys([*ncfg["algorithms"], chosen[task]]))
        for algo in algos:
            seed = derive_seed(cfg.seed, "names", task, algo)
            hp = cfg.hyperparameters(algo)
            tr, te = split_dataset(ds, seed, ncfg["test_fraction"])
            rep = evaluate(train(tr, algo, hp, seed), te)
            rows.append(
                {
                    "task": task,
                    "algorithm": algo,
                    "evaluation": "holdout",
                    "n": rep.n,
                    "accuracy": rep.accuracy,
                    "accuracy_std": None,
                    "macro_precision": rep.macro_precision,
                    "macro_recall": rep.macro_recall,
                    "macro_f1": rep.macro_f1,
                    "oob_accuracy": rep.oob_accuracy,
                }
            )
            cv = kfold_cv(ds, algo, ncfg["cv_folds"], seed, hp)
            rows.append(
                {
                    "task": task,
                    "algorithm": algo,
                    "evaluation": f"cv{ncfg['cv_folds']}",
                    "n": len(ds),
                    "accuracy": cv.mean_accuracy,
                    "accuracy_std": cv.std_accuracy,
                    "macro_precision": float(np.mean([f.macro_precision for f in cv.folds])),
                    "macro_recall": float(np.mean([f.macro_recall for f in cv.folds])),
                    "macro_f1": cv.mean_macro_f1,
                    "oob_accuracy": None,
                }
            )
        # deployed model uses every labeled name
        algo = chosen[task]
        seed = derive_seed(cfg.seed, "names", task, algo)
        model = train(ds, algo, cfg.hyperparameters(algo), seed)
        write_text(ws.models / f"{task}.json", model.to_json() + "\n")
        log.info("name model trained", extra={"stage": "train-names", "task": task, "algorithm": algo})
    write_ndjson(ws.intermediate / "name_metrics.ndjson", rows)
    _record(ws, cfg, "train-names", counts)
    return counts


def _load_posts(ws, relevant_only=True):
    ws.require(ws.intermediate / "posts.ndjson")
    posts = read_ndjson(ws.intermediate / "posts.ndjson")
    return [p for p in posts if p["relevant"]] if relevant_only else posts


def run_infer_demo(cfg: PipelineConfig, ws: Workspace) -> dict:
    ws.require(ws.intermediate / "posts.ndjson", ws.models / "gender.json", ws.models / "race.json")
    posts = _load_posts(ws)
    g_model = NameClassifier.from_json((ws.models / "gender.json").read_text("utf-8"))
    r_model = NameClassifier.from_json((ws.models / "race.json").read_text("utf-8"))
    genders = g_model.predict_many([p["first_name"] for p in posts])
    races = r_model.predict_many([p["last_name"] for p in posts])
    records = [
        {"id": p["id"], "gender": g[0], "gender_confidence": g[1], "race": r[0], "race_confidence": r[1]}
        for p, g, r in zip(posts, genders, races)
    ]
    write_ndjson(ws.intermediate / "demographics.ndjson", records)
    counts = {
        "inferred": len(records),
        "gender_missing": sum(r["gender"] is None for r in records),
        "race_missing": sum(r["race"] is None for r in records),
    }
    _record(ws, cfg, "infer-demo", counts)
    return counts


def read_labeled_tweets(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "text", "label"]:
            raise DataError(f"{path}: header must be id,text,label")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if row["label"] not in ACTIVITY_LABELS:
                raise DataError(f"{path}:{lineno}: unknown label {row['label']!r}")
            rows.append(row)
    return rows


def run_train_activity(cfg: PipelineConfig, ws: Workspace) -> dict:
    stopwords, _ = _cleaning_resources(cfg)
    lem = cfg.values["cleaning"]["lemmatize"]
    rows = read_labeled_tweets(cfg.input_path("labeled_tweets"))
    token_lists = [clean_text(r["text"], stopwords, lem)[1] for r in rows]
    enc = cfg.encoder
    vocab = build_vocab(token_lists, enc.vocab_size)
    enc = type(enc)(**{**enc.to_dict(), "vocab_size": len(vocab)})
    labeled = [(tokenize(t, vocab, enc.max_len), r["label"]) for t, r in zip(token_lists, rows)]
    opt = cfg.optimizer
    params, train_log, rep = train_classifier(labeled, enc, opt, derive_seed(cfg.seed, "activity"))
    save_checkpoint(ActivityModel(enc, vocab, params, opt), ws.models / "activity.ckpt")
    write_ndjson(ws.intermediate / "activity_training.ndjson", train_log)
    counts = {
        "labeled_examples": len(rows),
        "vocab_size": len(vocab),
        "eval_split": rep.extra["split"],
        "eval_n": rep.n,
        "eval_accuracy": rep.accuracy,
        "eval_macro_f1": rep.macro_f1,
    }
    _record(ws, cfg, "train-activity", counts)
    return counts


@dataclass
class _Post:
    id: str
    tokens: list


def run_classify(cfg: PipelineConfig, ws: Workspace) -> dict:
    ws.require(ws.intermediate / "posts.ndjson", ws.models / "activity.ckpt")
    posts = _load_posts(ws)
    model = load_checkpoint(ws.models / "activity.ckpt")
    assignments, _ = classify_corpus(model, [_Post(p["id"], p["tokens"]) for p in posts])
    write_ndjson(ws.intermediate / "activity.ndjson", assignments)
    counts = {"classified": len(assignments)}
    _record(ws, cfg, "classify", counts)
    return counts


def _lexicon(cfg: PipelineConfig) -> Lexicon:
    _, negators = _cleaning_resources(cfg)
    s = cfg.values["sentiment"]
    return Lexicon(read_lexicon_csv(cfg.input_path("lexicon")), negators, s["pos_threshold"], s["neg_threshold"])


def run_sentiment(cfg: PipelineConfig, ws: Workspace) -> dict:
    ws.require(ws.intermediate / "posts.ndjson", ws.intermediate / "activity.ndjson")
    posts = {p["id"]: p for p in _load_posts(ws)}
    lex = _lexicon(cfg)
    records = []
    for a in read_ndjson(ws.intermediate / "activity.ndjson"):
        raw, cls = score_post(posts[a["id"]]["sentiment_tokens"], lex)
        records.append({"id": a["id"], "label": a["label"], "score": raw, "sentiment": cls})
    write_ndjson(ws.intermediate / "sentiment.ndjson", records)
    counts = {"scored": len(records), **{c: sum(r["sentiment"] == c for r in records) for c in SENTIMENT_CLASSES}}
    _record(ws, cfg, "sentiment", counts)
    return counts


def choice_observations(posts, demographics, activity, socio):
    """Join relevant posts into MNL rows; returns ``(observations, exclusions)``."""
    demo = {d["id"]: d for d in demographics}
    obs = []
    excl = {"no_county": 0, "no_socio": 0, "no_gender": 0, "no_race": 0}
    for a in activity:
        p, d = posts[a["id"]], demo.get(a["id"])
        if p["geo_unit"] is None:
            excl["no_county"] += 1
            continue
        prof = join_socioeconomics(p["geo_unit"], socio)
        if prof is None:
            excl["no_socio"] += 1
            continue
        if d is None or d["gender"] is None:
            excl["no_gender"] += 1
            continue
        if d["race"] is None:
            excl["no_race"] += 1
            continue
        attrs = {
            "female": float(d["gender"] == "Female"),
            "race_asian": float(d["race"] == "Asian"),
            "race_black": float(d["race"] == "Black"),
            "race_hispanic": float(d["race"] == "Hispanic"),
            "low_income": float(prof.low_income_flag),
        }
        obs.append(ChoiceObservation(attrs, ACTIVITY_LABELS.index(a["label"])))
    return obs, excl


def run_estimate(cfg: PipelineConfig, ws: Workspace) -> dict:
    i = ws.intermediate
    ws.require(i / "activity.ndjson", i / "demographics.ndjson", i / "posts.ndjson")
    posts = {p["id"]: p for p in _load_posts(ws)}
    activity = read_ndjson(i / "activity.ndjson")
    demographics = read_ndjson(i / "demographics.ndjson")
    socio = load_socio_table(cfg.input_path("socio"))
    spec = UtilitySpec.from_json(cfg.input_path("mnl_spec"))
    obs, excl = choice_observations(posts, demographics, activity, socio)
    write_choice_csv(i / "choice_data.csv", obs, MNL_VARIABLES)
    counts = {"observations": len(obs), **{f"excluded_{k}": v for k, v in excl.items()}}
    if not obs:
        notice = "MNL estimation skipped: no observations after filtering"
        log.warning(notice, extra={"stage": "estimate"})
        write_json(i / "mnl_estimate.json", {"skipped": True, "notice": notice, "spec": spec.to_dict()})
        counts["skipped"] = True
    else:
        est = estimate(spec, design(spec, obs), cfg.estimation)
        if not est.converged:
            log.warning("MNL did not converge", extra={"stage": "estimate", "iterations": est.iterations})
        write_json(i / "mnl_estimate.json", {"skipped": False, "estimate": est.to_dict(), "spec": spec.to_dict()})
        counts.update(skipped=False, converged=est.converged, iterations=est.iterations)
    _record(ws, cfg, "estimate", counts)
    return counts


# ---------------------------------------------------------------------------
# Reports


def _county_counts(posts, units):
    by_unit = {u.fips: [0, 0] for u in units}
    for p in posts:
        if p["geo_unit"] is not None:
            by_unit[p["geo_unit"]][0] += 1
            by_unit[p["geo_unit"]][1] += int(p["relevant"])
    rows = [(u.fips, u.name, *by_unit[u.fips]) for u in sorted(units, key=lambda u: u.fips)]
    return csv_text(["fips", "name", "posts", "relevant_posts"], rows)


NAME_METRIC_COLUMNS = (
    "task",
    "algorithm",
    "evaluation",
    "n",
    "accuracy",
    "accuracy_std",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "oob_accuracy",
)


def _name_metrics(rows):
    out = []
    for r in rows:
        out.append([r[c] if c in ("task", "algorithm", "evaluation", "n") else _f(r[c]) for c in NAME_METRIC_COLUMNS])
    return csv_text(NAME_METRIC_COLUMNS, out)


def _mnl_outputs(doc):
    if doc["skipped"]:
        return csv_text(["SKIPPED", "notice"], [["SKIPPED", doc["notice"]]]), doc["notice"] + "\n"
    est = MNLEstimate.from_dict(doc["estimate"])
    table = report_table(est, UtilitySpec.from_dict(doc["spec"]))
    return emit_csv(table), emit_text(table)


def run_report(cfg: PipelineConfig, ws: Workspace) -> dict:
    i = ws.intermediate
    needed = [
        i / "posts.ndjson",
        i / "name_metrics.ndjson",
        i / "activity.ndjson",
        i / "sentiment.ndjson",
        i / "mnl_estimate.json",
    ]
    ws.require(*needed)
    ws.require(*(ws.stage_record(s) for s in STAGES[:-1]))
    posts = read_ndjson(i / "posts.ndjson")
    units = load_geography(cfg.input_path("geography"))
    activity = read_ndjson(i / "activity.ndjson")
    sentiment = read_ndjson(i / "sentiment.ndjson")

    files = {}
    files["county_counts.csv"] = _county_counts(posts, units)
    files["name_model_metrics.csv"] = _name_metrics(read_ndjson(i / "name_metrics.ndjson"))
    table = distribution_table([a["label"] for a in activity]) or [(lab, 0, 0.0) for lab in ACTIVITY_LABELS]
    files["category_distribution.csv"] = csv_text(
        ["label", "count", "percent"], [(lab, n, f"{pct:.4f}") for lab, n, pct in table]
    )
    matrix = aggregate_matrix((s["label"], s["sentiment"]) for s in sentiment)
    files["sentiment_matrix.csv"] = csv_text(["label", *SENTIMENT_CLASSES], list(matrix.rows()))
    files["mnl_table.csv"], files["mnl_table.txt"] = _mnl_outputs(json.loads((i / "mnl_estimate.json").read_text("utf-8")))

    stage_counts = {}
    for s in STAGES[:-1]:
        stage_counts[s] = json.loads(ws.stage_record(s).read_text("utf-8"))["counts"]
    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": cfg.seed,
        "versions": {
            "crisis_concerns": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "config": cfg.canonical(),
        "config_sha256": cfg.digest(),
        "inputs": {
            k: {"file": p.name, "sha256": sha256_file(p)} for k, p in sorted(cfg.input_paths().items())
        },
        "counts": stage_counts,
        "reports": {name: hashlib.sha256(text.encode("utf-8")).hexdigest() for name, text in sorted(files.items())},
    }
    for name, text in files.items():
        write_text(ws.reports / name, text)
    write_json(ws.reports / "run_manifest.json", manifest)
    counts = {"reports": len(files) + 1}
    log.info("stage complete", extra={"stage": "report", "counts": counts})
    return counts


STAGE_FUNCS = {
    "ingest": run_ingest,
    "train-names": run_train_names,
    "infer-demo": run_infer_demo,
    "train-activity": run_train_activity,
    "classify": run_classify,
    "sentiment": run_sentiment,
    "estimate": run_estimate,
    "report": run_report,
}


def _incomplete_marker(ws):
    return ws.root / "INCOMPLETE.json"


def run_stage(cfg: PipelineConfig, stage: str) -> dict:
    """Run one stage; on failure leave a machine-readable error report."""
    ws = Workspace(cfg.output_dir)
    ws.root.mkdir(parents=True, exist_ok=True)
    log.info("stage start", extra={"stage": stage})
    try:
        counts = STAGE_FUNCS[stage](cfg, ws)
    except PipelineError as exc:
        write_json(
            _incomplete_marker(ws),
            {
                "stage": stage,
                "error": type(exc).__name__,
                "message": str(exc),
                "exit_code": exc.exit_code,
                "producers": list(getattr(exc, "producers", ())),
            },
        )
        raise
    marker = _incomplete_marker(ws)
    if marker.exists() and json.loads(marker.read_text("utf-8")).get("stage") == stage:
        marker.unlink()
    return counts


def run_pipeline(cfg: PipelineConfig, resume: bool = False) -> Path:
    """Execute every stage in order; returns the report directory."""
    ws = Workspace(cfg.output_dir)
    reusing = resume
    for stage in STAGES:
        # once one stage reruns, everything downstream reruns too
        if reusing and stage != "report" and stage_is_current(ws, cfg, stage):
            log.info("stage skipped (resume)", extra={"stage": stage})
            continue
        reusing = False
        run_stage(cfg, stage)
    return ws.reports
