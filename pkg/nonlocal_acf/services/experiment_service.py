"""
Experiment runner: config loading, claim dispatch, CSV/JSON reports and
manifest-driven verification.
"""
import csv
import io
import json
import logging
import os
import tempfile
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from nonlocal_acf.api.router import ClaimResult
from nonlocal_acf.api.routes import registry
from nonlocal_acf.api.schemas.experiment import ExperimentConfig, PointRecord, Report, VerifySummary
from nonlocal_acf.core.cache import flush_all
from nonlocal_acf.core.config import settings
from nonlocal_acf.core.enums import Outcome
from nonlocal_acf.core.errors import ConfigError, NonlocalACFError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_OUT_DIR = ExperimentConfig.model_fields["out_dir"].default


# ---- Config loading ----

def _validate(raw: Dict[str, Any], source: str) -> ExperimentConfig:
    try:
        config = ExperimentConfig(**raw)
        config.quadrature_spec()
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc.errors()[0]['msg']}",
                          context={"source": source, "errors": len(exc.errors())}) from exc
    return config


def load_config(path: PathLike, **overrides: Any) -> ExperimentConfig:
    """Read one TOML experiment file; non-None overrides replace its keys."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config file not found", context={"path": str(path)}) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", context={"path": str(path)}) from exc
    raw.setdefault("name", path.stem)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return _validate(raw, str(path))


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    return _validate(dict(raw), "<arguments>")


# ---- Output ----

def _plain(value: Any) -> Any:
    """Recursively turn numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> str:
    """Fixed-column CSV; floats are written with repr so output is exact and reproducible."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(_plain(row.get(c))) for c in columns])
    return buffer.getvalue()


def atomic_write(path: PathLike, text: str):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report_json(report: Report) -> str:
    return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _base_report(config: ExperimentConfig, outcome: Outcome, **fields: Any) -> Report:
    return Report(
        schema_version=settings.REPORT_SCHEMA_VERSION,
        library_version=settings.PROJECT_VERSION,
        claim=config.claim,
        name=config.report_name,
        outcome=outcome,
        config=config.model_dump(mode="json"),
        **fields,
    )


def write_error_report(config: ExperimentConfig, exc: NonlocalACFError, out_dir: Optional[PathLike] = None) -> Report:
    """Record a failed run as a JSON report carrying the error's module provenance."""
    report = _base_report(config, Outcome.FAIL, error=exc.to_dict())
    out = Path(out_dir or config.out_dir)
    atomic_write(out / f"{config.report_name}.json", _report_json(report))
    return report


# ---- Running ----

def run(config: ExperimentConfig, out_dir: Optional[PathLike] = None) -> Report:
    """Dispatch one experiment to its claim handler and write its CSV and JSON."""
    out = Path(out_dir or config.out_dir)
    handler = registry.resolve(config.claim)
    logger.info("Running %s (%s)", config.report_name, config.claim.value)

    start = time.perf_counter()
    try:
        result: ClaimResult = handler(config)
    finally:
        flushed = flush_all()
        if flushed:
            logger.debug("Flushed %d cached points", flushed)
    wall_time = time.perf_counter() - start

    rows = [_plain(r) for r in result.rows]
    report = _base_report(
        config, result.outcome,
        summary=_plain(result.summary),
        columns=list(result.columns),
        records=[PointRecord(values={c: r.get(c) for c in result.columns}) for r in rows],
        details=_plain(result.details),
        assumptions=list(result.assumptions),
        wall_time=wall_time,
    )
    atomic_write(out / f"{config.report_name}.csv", csv_text(result.columns, rows))
    atomic_write(out / f"{config.report_name}.json", _report_json(report))

    log = logger.warning if result.outcome != Outcome.PASS else logger.info
    log("%s finished in %.1fs: %s", config.report_name, wall_time, result.outcome.value)
    return report


def _manifest_entries(path: Path):
    for line in path.read_text(encoding="utf-8").splitlines():
        entry = line.strip()
        if entry and not entry.startswith("#"):
            yield entry


def verify_all(manifest: PathLike, out_dir: Optional[PathLike] = None, jobs: Optional[int] = None,
               seed: Optional[int] = None) -> VerifySummary:
    """Run every config listed in a manifest (paths relative to the manifest)."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise ConfigError("manifest not found", context={"manifest": str(manifest)})
    entries = list(_manifest_entries(manifest))
    summary = VerifySummary(total=len(entries))
    out = Path(out_dir) if out_dir else None

    for entry in entries:
        config = None
        try:
            config = load_config(manifest.parent / entry, jobs=jobs, seed=seed)
            report = run(config, out)
        except NonlocalACFError as exc:
            logger.error("%s failed: %s", entry, exc)
            if config is not None:
                write_error_report(config, exc, out)
            summary.failed.append(config.report_name if config else entry)
            continue
        if report.outcome == Outcome.PASS:
            summary.passed.append(report.name)
        elif report.outcome == Outcome.HYPOTHESIS_NOT_MET:
            summary.hypothesis_not_met.append(report.name)
        else:
            summary.failed.append(report.name)

    atomic_write((out or Path(DEFAULT_OUT_DIR)) / "summary.json",
                 json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    logger.info("verify-all: %d experiments, %d passed, %d failed, %d hypothesis not met",
                summary.total, len(summary.passed), len(summary.failed), len(summary.hypothesis_not_met))
    return summary
