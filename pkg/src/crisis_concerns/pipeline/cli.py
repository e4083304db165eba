"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault,
1 anything else.  Logs go to standard error, one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

from ..errors import ConfigError, PipelineError
from .config import load_config, validate_config
from .stages import STAGES, run_pipeline, run_stage

log = logging.getLogger("crisis_concerns.pipeline")

FIXTURE_FILES = (
    "posts.jsonl",
    "geography.geojson",
    "socio.csv",
    "ssa_names.csv",
    "census_surnames.csv",
    "labeled_tweets.csv",
    "mnl_spec.json",
)
_STD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name, "event": record.getMessage()}
        for k, v in vars(record).items():
            if k not in _STD_ATTRS:
                out[k] = v
        return json.dumps(out, sort_keys=True, default=str)


def _configure_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("crisis_concerns")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _parse_overrides(extra):
    """``--a.b value`` or ``--a.b=value`` pairs left over by argparse."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"--{key} needs a value")
            value = extra[i + 1]
            i += 2
        out.append((key, value))
    return out


STAGE_HELP = {
    "ingest": "parse posts, clean text, assign counties, flag relevance",
    "train-names": "train and evaluate the name-based gender and race classifiers",
    "infer-demo": "infer author gender and race for relevant posts",
    "train-activity": "train the activity encoder on labeled tweets",
    "classify": "label relevant posts with an activity category",
    "sentiment": "score post sentiment and join with activity labels",
    "estimate": "estimate the multinomial logit model",
    "report": "write the report bundle",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crisis-concerns",
        description="Activity-concern analysis of geotagged posts. Any config key can be overridden with --key value "
        "(dotted for nested keys, e.g. --encoder.model_dim 16).",
    )
    p.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(sp):
        sp.add_argument("--config", required=True, help="path to the JSON run configuration")
        return sp

    r = with_config(sub.add_parser("run", help="run every stage in order"))
    r.add_argument("--resume", action="store_true", help="skip stages whose outputs are current")
    for stage in STAGES:
        with_config(sub.add_parser(stage, help=STAGE_HELP[stage], description=STAGE_HELP[stage]))
    with_config(sub.add_parser("validate", help="check a configuration and list every problem"))
    init = sub.add_parser("init-fixture", help="copy the bundled 200-post fixture and a config into DIR")
    init.add_argument("directory", metavar="DIR")
    return p


def init_fixture(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    src = resources.files("crisis_concerns.data").joinpath("fixture")
    for name in FIXTURE_FILES:
        with resources.as_file(src.joinpath(name)) as f:
            shutil.copyfile(f, d / name)
    with resources.as_file(src.joinpath("config.json")) as f:
        shutil.copyfile(f, d / "config.json")
    return d / "config.json"


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    _configure_logging(args.log_level)
    command = args.command
    try:
        if command == "init-fixture":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            path = init_fixture(args.directory)
            print(path)
            return 0
        overrides = _parse_overrides(extra)
        if command == "validate":
            _, errors = validate_config(args.config, overrides)
            for e in errors:
                print(e)
            if errors:
                log.error("invalid configuration", extra={"errors": errors})
                return ConfigError.exit_code
            print("configuration valid")
            return 0
        cfg = load_config(args.config, overrides)
        if command == "run":
            reports = run_pipeline(cfg, resume=args.resume)
            log.info("pipeline complete", extra={"reports": str(reports.relative_to(cfg.output_dir))})
        else:
            run_stage(cfg, command)
        return 0
    except PipelineError as exc:
        payload = {"error": type(exc).__name__, "exit_code": exc.exit_code, "command": command}
        errors = getattr(exc, "errors", None)
        if errors:
            payload["errors"] = errors
        producers = getattr(exc, "producers", ())
        if producers:
            payload["producers"] = list(producers)
        log.error(str(exc), extra=payload)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - unexpected failure path
        log.exception("unexpected failure", extra={"error": type(exc).__name__, "command": command})
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
