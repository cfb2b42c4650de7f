"""Writing experiment artifacts and summarizing them.

Everything except ``manifest.json`` is a pure function of the configuration,
so repeated runs produce identical bytes. Floats are written with ``repr``,
the shortest string that round-trips.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .config import ExperimentConfig
from .experiments import ExperimentResult, Table, json_safe
from .imethod import schedule_event_lines

MANIFEST = "manifest.json"
REPORT = "report.json"
CONFIG = "config.json"
SUMMARY = "summary.md"

# which acceptance criterion each check belongs to
CRITERIA = {
    "psi-variance": 1,
    "phi-stationarity": 2,
    "stationary-identity": 2,
    "log-rates": 3,
    "wick-orthogonality": 4,
    "contraction-converges": 5,
    "contraction-slope": 5,
    "manufactured-solution": 5,
    "energy-identity-order": 6,
    "commutator-slope-k2": 7,
    "commutator-slope-k3": 7,
    "commutator-zero": 7,
    "invariance": 8,
    "invariance-half-dt": 8,
    "linear-control": 8,
    "wrong-variance-control": 8,
    "rejection-importance": 9,
    "schedule-arithmetic": 10,
}


class MissingArtifactError(FileNotFoundError):
    def __init__(self, missing: Sequence[str]):
        super().__init__("missing artifacts: " + ", ".join(missing))
        self.missing = list(missing)


def _cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def dumps(doc) -> str:
    return json.dumps(json_safe(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode, **({} if isinstance(data, bytes) else {"newline": ""})) as fh:
        fh.write(data)


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_artifacts(result: ExperimentResult, cfg: ExperimentConfig, out: str | os.PathLike,
                    wall_time: float, threads: int = 1) -> list[str]:
    """Write every artifact of one run into ``out``; return the file names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fmt = cfg.output.format
    files = []

    def put(name, data):
        _write(out / name, data)
        files.append(name)

    put(CONFIG, cfg.to_json() + "\n")
    for name, table in sorted(result.tables.items()):
        if fmt == "csv":
            put(f"{name}.csv", table_csv(table))
        else:
            put(f"{name}.json", dumps(table.as_records()))
    if result.events:
        put("schedule_events.jsonl", schedule_event_lines(json_safe(result.events)))
    for name, (blob, sidecar) in sorted(result.binaries.items()):
        put(name, blob)
        put(name + ".json", dumps(sidecar))
    report = {
        "experiment": result.experiment,
        "passed": result.passed,
        "checks": [dict(c.as_dict(), criterion=CRITERIA.get(c.name)) for c in result.checks],
        "extras": result.extras,
        "tables": {k: (f"{k}.{fmt}") for k in sorted(result.tables)},
        "seed": cfg.run.seed,
    }
    put(REPORT, dumps(report))
    manifest = {
        "experiment": result.experiment,
        "codeVersion": __version__,
        "config": cfg.to_dict(),
        "wallTimeSeconds": round(wall_time, 3),
        "threads": threads,
        "files": {f: sha256(out / f) for f in files},
    }
    _write(out / MANIFEST, dumps(manifest))
    return files + [MANIFEST]


def write_blowup(err, cfg: ExperimentConfig, out: str | os.PathLike) -> list[str]:
    """Snapshot the last good state of a run that exceeded the norm ceiling."""
    from .snapshot import encode

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    state = err.last_good
    _write(out / "blowup_last_good.wwf", encode(state.lattice, [state.position.coeffs, state.velocity.coeffs]))
    side = {"kind": "blowup-last-good", "t": err.t, "norm": err.norm, "ceiling": err.ceiling,
            "experiment": cfg.experiment, "seed": cfg.run.seed}
    _write(out / "blowup_last_good.wwf.json", dumps(side))
    return ["blowup_last_good.wwf", "blowup_last_good.wwf.json"]


# ---------------------------------------------------------------------------
# summary


def _load_run(path: Path) -> dict:
    missing = [n for n in (MANIFEST, REPORT) if not (path / n).is_file()]
    if missing:
        raise MissingArtifactError([str(path / n) for n in missing])
    report = json.loads((path / REPORT).read_text())
    absent = [str(path / f) for f in report.get("tables", {}).values() if not (path / f).is_file()]
    if absent:
        raise MissingArtifactError(absent)
    return report


def _read_table(path: Path) -> tuple[list, list]:
    if path.suffix == ".json":
        recs = json.loads(path.read_text())
        cols = list(recs[0]) if recs else []
        return cols, [[r[c] for c in cols] for r in recs]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    try:
        return f"{float(x):.6g}"
    except (TypeError, ValueError):
        return str(x)


def _markdown_table(cols, rows) -> list[str]:
    out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    out += ["| " + " | ".join(_fmt(x) for x in r) + " |" for r in rows]
    return out


def run_dirs(root: str | os.PathLike) -> list[Path]:
    """``root`` itself if it holds a run, else its immediate subdirectories that do."""
    root = Path(root)
    if not root.is_dir():
        raise MissingArtifactError([str(root)])
    if (root / REPORT).exists() or (root / MANIFEST).exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and ((p / REPORT).exists() or (p / MANIFEST).exists()))
    if not dirs:
        raise MissingArtifactError([str(root / MANIFEST), str(root / REPORT)])
    return dirs


def emit_summary(paths: Iterable[str | os.PathLike]) -> str:
    """Markdown report with one verdict per criterion, tables and fitted exponents."""
    lines = ["# Experiment summary", ""]
    verdicts: dict[int, list[bool]] = {}
    sections = []
    for root in paths:
        for d in run_dirs(root):
            rep = _load_run(d)
            sec = [f"## {rep['experiment']} ({d.name})", ""]
            sec += ["| check | criterion | value | target | result |", "|---|---|---|---|---|"]
            for c in rep["checks"]:
                crit = c.get("criterion")
                if crit is not None:
                    verdicts.setdefault(crit, []).append(bool(c["passed"]))
                sec.append(f"| {c['name']} | {crit if crit is not None else '-'} | {_fmt(c['value'])} | "
                           f"{c['target']} | {'PASS' if c['passed'] else 'FAIL'} |")
            sec.append("")
            for name, fname in rep.get("tables", {}).items():
                cols, rows = _read_table(d / fname)
                sec += [f"### {name}", ""] + _markdown_table(cols, rows[:40]) + [""]
            fits = rep.get("extras", {}).get("fits")
            if fits:
                sec += ["### fitted exponents", "", "| k | slope | 95% CI | reference |", "|---|---|---|---|"]
                for k, f in sorted(fits.items()):
                    lo, hi = f["ci95"]
                    sec.append(f"| {k} | {f['slope']:.4f} | [{lo:.4f}, {hi:.4f}] | {f['reference']:.4f} |")
                sec.append("")
            slope = rep.get("extras", {}).get("slope")
            if slope:
                lo, hi = slope["value"] - 1.96 * slope["stderr"], slope["value"] + 1.96 * slope["stderr"]
                sec += [f"Contraction slope {slope['value']:.4f}, 95% CI [{lo:.4f}, {hi:.4f}], "
                        f"reference {slope['reference']}.", ""]
            growth = rep.get("extras", {}).get("growth")
            if growth:
                sec += ["Growth envelope: " + ", ".join(f"{k} = {_fmt(v)}" for k, v in sorted(growth.items())), ""]
            sections.append(sec)
    lines += ["| criterion | result |", "|---|---|"]
    for crit in sorted(verdicts):
        lines.append(f"| {crit} | {'PASS' if all(verdicts[crit]) else 'FAIL'} |")
    lines.append("")
    for sec in sections:
        lines += sec
    return "\n".join(lines)
