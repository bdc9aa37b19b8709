from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, Iterable, List


MANIFEST_NAME = "manifest.json"


def sha256_file_hex(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, paths: Iterable[str]) -> str:
    """Writes {file name: sha256} for the given outputs into out_dir/manifest.json."""
    digests = {os.path.relpath(p, out_dir): sha256_file_hex(p) for p in sorted(paths)}
    target = os.path.join(out_dir, MANIFEST_NAME)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(digests, f, indent=2, sort_keys=True)
        f.write("\n")
    return target


def verify_manifest(out_dir: str) -> List[str]:
    """
    Returns the files whose digest no longer matches (missing files included).
    An empty list means every listed output is intact.
    """
    with open(os.path.join(out_dir, MANIFEST_NAME), "r", encoding="utf-8") as f:
        expected: Dict[str, str] = json.load(f)
    bad = []
    for name, digest in sorted(expected.items()):
        path = os.path.join(out_dir, name)
        if not os.path.isfile(path) or sha256_file_hex(path) != digest.strip().lower():
            bad.append(name)
    return bad
