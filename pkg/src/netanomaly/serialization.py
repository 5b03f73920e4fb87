"""Versioned JSON envelope shared by every persisted artifact."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

SCHEMA_VERSION = "1.0"


class VersionError(ValueError):
    pass


def envelope(kind: str, payload: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "payload": payload}


def open_envelope(doc: dict, kind: str | None = None) -> dict:
    version = str(doc.get("schema_version", ""))
    major = version.split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise VersionError(f"unsupported schema_version {version!r} (reader is {SCHEMA_VERSION})")
    if kind is not None and doc.get("kind") != kind:
        raise VersionError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    return doc["payload"]


def dumps(doc: dict) -> str:
    # allow_nan: an undefined AUC is reported as NaN rather than failing the write.
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True)


def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, kind: str, payload: dict) -> None:
    atomic_write_text(path, dumps(envelope(kind, payload)))


def load(path, kind: str | None = None) -> dict:
    with open(path) as fh:
        return open_envelope(json.load(fh), kind)
