"""File formats read and written by the command-line tool.

CSV files have a header row, UTF-8, '.' decimals and LF line endings; floats
are written with ``repr`` so they round-trip exactly. Every writer goes
through :func:`atomic_write`, which renders to a temporary file in the target
directory and renames it into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .actions import ActionLabel, LaneGraph, Snapshot
from .curation import SessionRecord
from .errors import DataError, ScalePlanError
from .fitting import Observation
from .metrics import RunLog

OBSERVATION_COLUMNS = ("hours", "value", "action", "metric", "backbone")
RUNLOG_COLUMNS = ("scenario", "total_km", "failures")
LABEL_COLUMNS = ("session_id", "arclength_m", "action", "angle_deg")
ASSIGNMENT_COLUMNS = ("session_id", "split", "tier")


def fmt(value) -> str:
    """Stable text for a CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def atomic_write(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=True) + "\n"


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_csv(path, required: Sequence[str]) -> list[dict]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise DataError(f"{path}: missing column(s) {missing}")
            return list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise DataError(f"{path}: not UTF-8 text") from None


def _read_jsonl(path) -> list[dict]:
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return out


def _float(row: dict, key: str, where: str) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError, KeyError):
        raise DataError(f"{where}: {key}={row.get(key)!r} is not a number") from None


# -- observations -----------------------------------------------------------


def read_observations(path) -> list[Observation]:
    rows = _read_csv(path, ("hours", "value"))
    obs = []
    for i, r in enumerate(rows, 2):
        where = f"{path}:{i}"
        try:
            obs.append(
                Observation(
                    hours=_float(r, "hours", where),
                    value=_float(r, "value", where),
                    action=r.get("action") or "",
                    metric=r.get("metric") or "",
                    backbone=r.get("backbone") or "",
                )
            )
        except ScalePlanError as exc:
            raise DataError(f"{where}: {exc}") from None
    if not obs:
        raise DataError(f"{path}: no observations")
    obs.sort(key=lambda o: o.hours)
    if any(a.hours == b.hours for a, b in zip(obs, obs[1:])):
        raise DataError(f"{path}: repeated dataset size")
    return obs


def observations_text(obs: Iterable[Observation]) -> str:
    return csv_text(OBSERVATION_COLUMNS, ((o.hours, o.value, o.action, o.metric, o.backbone) for o in obs))


def read_prediction_cases(path) -> list[tuple[str, list[tuple[float, float]]]]:
    """``(target, actual_hours)`` pairs grouped by action, in file order."""
    rows = _read_csv(path, ("target", "actual_hours"))
    groups: dict[str, list[tuple[float, float]]] = {}
    for i, r in enumerate(rows, 2):
        where = f"{path}:{i}"
        groups.setdefault(r.get("action") or "", []).append((_float(r, "target", where), _float(r, "actual_hours", where)))
    if not groups:
        raise DataError(f"{path}: no cases")
    return list(groups.items())


# -- sessions ---------------------------------------------------------------


def read_sessions(path) -> list[SessionRecord]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), 1):
        try:
            out.append(
                SessionRecord(
                    session_id=str(rec["session_id"]),
                    cells=frozenset(rec["cells"]),
                    hours=float(rec["hours"]),
                    odd=dict(rec["odd"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScalePlanError):
                raise DataError(f"{path}:{i}: {exc}") from None
            raise DataError(f"{path}:{i}: malformed session record ({exc})") from None
    if not out:
        raise DataError(f"{path}: no sessions")
    return out


def sessions_text(sessions: Iterable[SessionRecord]) -> str:
    lines = []
    for s in sessions:
        lines.append(
            json.dumps(
                {"session_id": s.session_id, "cells": sorted(s.cells), "hours": s.hours, "odd": dict(sorted(s.odd.items()))},
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


# -- trajectories and run logs ----------------------------------------------


def read_trajectories(path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), 1):
        try:
            pred = np.asarray(rec["pred"], dtype=float)
            truth = np.asarray(rec["truth"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{i}: malformed trajectory record ({exc})") from None
        out.append((str(rec.get("id", i)), pred, truth))
    if not out:
        raise DataError(f"{path}: no trajectory pairs")
    return out


def read_runlogs(path) -> list[RunLog]:
    rows = _read_csv(path, RUNLOG_COLUMNS)
    out = []
    for i, r in enumerate(rows, 2):
        where = f"{path}:{i}"
        failures = _float(r, "failures", where)
        if not failures.is_integer():
            raise DataError(f"{where}: failures must be an integer")
        try:
            out.append(RunLog(r["scenario"], _float(r, "total_km", where), int(failures)))
        except ScalePlanError as exc:
            raise DataError(f"{where}: {exc}") from None
    if not out:
        raise DataError(f"{path}: no run logs")
    return out


# -- lane graphs and labels -------------------------------------------------


def read_lane_graph(path) -> LaneGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        return LaneGraph.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed lane graph ({exc})") from None


def read_snapshots(path) -> list[Snapshot]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), 1):
        try:
            path_pts = np.asarray(rec["path"], dtype=float)
            start = rec.get("start_lanelet")
            out.append(
                Snapshot(
                    session_id=str(rec["session_id"]),
                    path=path_pts,
                    offset=float(rec.get("offset", 0.0)),
                    start_lanelet=None if start is None else str(start),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{i}: malformed ego path record ({exc})") from None
        if path_pts.ndim != 2 or path_pts.shape[0] < 2 or path_pts.shape[1] != 2:
            raise DataError(f"{path}:{i}: ego path needs >= 2 [x, y] points")
        if out[-1].offset < 0:
            raise DataError(f"{path}:{i}: offset must be >= 0")
    if not out:
        raise DataError(f"{path}: no ego paths")
    return out


def labels_text(rows: Iterable[tuple[str, ActionLabel]]) -> str:
    return csv_text(
        LABEL_COLUMNS,
        ((sid, round(l.distance, 6), l.action_type, round(l.angle, 6)) for sid, l in rows),
    )


def read_labels(path) -> list[tuple[str, ActionLabel]]:
    rows = _read_csv(path, LABEL_COLUMNS)
    out = []
    for i, r in enumerate(rows, 2):
        where = f"{path}:{i}"
        try:
            out.append((r["session_id"], ActionLabel(r["action"], _float(r, "arclength_m", where), _float(r, "angle_deg", where))))
        except ScalePlanError as exc:
            raise DataError(f"{where}: {exc}") from None
    return out
