"""Small shared helpers: deterministic seeds, digests, stable JSON."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any


def derive_seed(*parts: Any) -> int:
    """Fold arbitrary labels into a stable 63-bit sub-seed.

    All randomness in a run fans out from one root seed through this
    function, so reruns with the same root seed are reproducible.
    """
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(blob).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def content_digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return "sha256:" + hashlib.sha256(data).hexdigest()


def file_digest(path: str | Path) -> str:
    return content_digest(Path(path).read_bytes())


def stable_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, no ASCII escaping, newline-terminated."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def write_stable_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(stable_json(obj), encoding="utf-8")
