"""Locate SuiteSparse matrices by name, downloading into a local cache."""

from __future__ import annotations

import csv
import io
import logging
import os
import tarfile
import urllib.request
from pathlib import Path

log = logging.getLogger(__name__)

BASE_URL = "https://sparse.tamu.edu"
INDEX_URL = f"{BASE_URL}/files/ssstats.csv"

# spellings used in the literature -> collection names
ALIASES = {
    "chem97ztz": "Chem97ZtZ",
    "polilarge": "poli_large",
    "obstalae": "obstclae",
    "blackhole": "blckhole",
}

GROUPS = {
    "poli": "Grund",
    "poli3": "Grund",
    "poli_large": "Grund",
    "ex29": "FIDAP",
    "jagmesh4": "HB",
    "blckhole": "HB",
    "tols4000": "Bai",
    "rajat07": "Rajat",
    "bodyy4": "Pothen",
    "obstclae": "GHS_psdef",
    "torsion1": "GHS_psdef",
    "wathen100": "GHS_psdef",
    "linverse": "GHS_indef",
    "spmsrtls": "GHS_indef",
    "bcsstm39": "Boeing",
    "crystm03": "Boeing",
    "Chem97ZtZ": "Bates",
    "kim1": "Kim",
}

#: block counts known to suit particular matrices
PREFERRED_K = {"ex29": 5}


class MatrixUnavailable(RuntimeError):
    pass


def cache_dir() -> Path:
    env = os.environ.get("POBK_MATRIX_DIR")
    return Path(env) if env else Path.home() / ".cache" / "pobk" / "matrices"


def canonical_name(name: str) -> str:
    return ALIASES.get(name.lower(), name)


def find_local(name: str, directory: Path | None = None) -> Path | None:
    """Search the cache for ``name.mtx``, ``name/name.mtx`` or gzipped forms."""
    directory = cache_dir() if directory is None else Path(directory)
    if not directory.is_dir():
        return None
    wanted = {canonical_name(name).lower(), name.lower()}
    for path in sorted(directory.rglob("*.mtx*")):
        stem = path.name.lower().removesuffix(".gz").removesuffix(".mtx")
        if stem in wanted and path.name.lower().endswith((".mtx", ".mtx.gz")):
            return path
    return None


def _download(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def resolve_group(name: str, timeout: float = 30.0) -> str:
    if name in GROUPS:
        return GROUPS[name]
    try:
        text = _download(INDEX_URL, timeout).decode("utf-8", errors="replace")
    except OSError as exc:
        raise MatrixUnavailable(f"cannot resolve group of {name!r}: {exc}") from exc
    # first two lines are a count and a date; rows start "group,name,..."
    for row in csv.reader(io.StringIO(text)):
        if len(row) >= 2 and row[1] == name:
            return row[0]
    raise MatrixUnavailable(f"{name!r} not found in the collection index")


def fetch(name: str, offline: bool = False, timeout: float = 60.0) -> Path:
    """Return a local ``.mtx`` path for a collection matrix, downloading it
    into :func:`cache_dir` on first use."""
    hit = find_local(name)
    if hit is not None:
        return hit
    if offline:
        raise MatrixUnavailable(f"{name!r} not in {cache_dir()} and offline mode is on")
    cname = canonical_name(name)
    group = resolve_group(cname)
    url = f"{BASE_URL}/MM/{group}/{cname}.tar.gz"
    log.info("downloading %s", url)
    try:
        payload = _download(url, timeout)
    except OSError as exc:
        raise MatrixUnavailable(
            f"cannot download {url}: {exc}; place {cname}.mtx under {cache_dir()} "
            "or set POBK_MATRIX_DIR"
        ) from exc
    target = cache_dir() / f"{cname}.mtx"
    target.parent.mkdir(parents=True, exist_ok=True)
    with tarfile.open(fileobj=io.BytesIO(payload), mode="r:gz") as tar:
        member = next(
            (m for m in tar.getmembers() if m.name.endswith(f"/{cname}.mtx")), None
        )
        if member is None:
            raise MatrixUnavailable(f"{url} holds no {cname}.mtx")
        target.write_bytes(tar.extractfile(member).read())
    return target


def resolve_matrix(spec: str, offline: bool = False) -> Path:
    """A filesystem path if ``spec`` names an existing file, else a fetch."""
    path = Path(spec)
    if path.is_file():
        return path
    return fetch(spec, offline=offline)
