"""Locating the MovieLens-100K ratings table.

grouplens.org is not always reachable, but the RecBole wheel on PyPI ships
the same 100,000 ratings (``ml-100k.inter``: tab-separated user, item,
rating, timestamp with one header line). ``fetch_ml100k`` extracts it from
that wheel with ``pip download``.
"""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

from .dataio import PRESETS, RatingsFormat

ENV_VAR = "NCEPLREC_ML100K"
DEFAULT_PATH = Path(os.environ.get("NCEPLREC_DATA", Path.home() / ".cache" / "nceplrec")) / "ml-100k.inter"
WHEEL = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
ROWS = 100_000


def ml100k_format(path: Path) -> RatingsFormat:
    with open(path) as fh:
        first = fh.readline()
    return PRESETS["recbole"] if first.startswith("user_id") else PRESETS["ml100k"]


def fetch_ml100k(dest: Path | None = None) -> Path:
    """Return a path to the ML-100K ratings, downloading it if needed.

    ``$NCEPLREC_ML100K`` may point at an existing ``u.data`` or
    ``ml-100k.inter`` file.
    """
    if os.environ.get(ENV_VAR):
        return Path(os.environ[ENV_VAR])
    dest = Path(dest or DEFAULT_PATH)
    if dest.exists():
        return dest
    dest.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL],
            check=True,
        )
        (wheel,) = Path(tmp).glob("recbole-*.whl")
        with zipfile.ZipFile(wheel) as zf:
            data = zf.read(MEMBER)
    lines = data.count(b"\n")
    if lines < ROWS:
        raise RuntimeError(f"unexpected ml-100k payload ({lines} lines)")
    tmp_dest = dest.with_suffix(".part")
    tmp_dest.write_bytes(data)
    tmp_dest.replace(dest)
    return dest
