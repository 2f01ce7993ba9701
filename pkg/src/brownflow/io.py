"""Artifact writers: atomic files, stable CSV/JSON layouts."""
from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

PATHS_HEADER = ("replica", "tag", "step", "time", "position")
PLAN_HEADER = ("i", "j", "mass", "cost")


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(directory: Path, files: dict[str, str]) -> None:
    """Stage every file as a temporary sibling, then rename them into place."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, directory / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for tmp, dest in staged:
            os.replace(tmp, dest)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def paths_csv(paths: np.ndarray, times: np.ndarray, steps: np.ndarray) -> str:
    """Long-format table of positions, one row per (replica, tag, step)."""
    r, t, n = paths.shape
    rep = np.repeat(np.arange(r), t * n)
    tag = np.tile(np.repeat(np.arange(n), t), r)
    step = np.tile(np.tile(steps, n), r)
    time = np.tile(np.tile(times, n), r)
    pos = paths.transpose(0, 2, 1).ravel()
    buf = io.StringIO()
    buf.write(",".join(PATHS_HEADER) + "\n")
    table = np.empty(rep.size, dtype=[("a", "i8"), ("b", "i8"), ("c", "i8"),
                                      ("d", "f8"), ("e", "f8")])
    table["a"], table["b"], table["c"], table["d"], table["e"] = rep, tag, step, time, pos
    np.savetxt(buf, table, fmt=["%d", "%d", "%d", "%.17g", "%.17g"], delimiter=",")
    return buf.getvalue()


def manifest(command: str, config: dict, files: list[str]) -> str:
    return dumps({"schema_version": SCHEMA_VERSION, "command": command,
                  "config": config, "files": sorted(files)})
