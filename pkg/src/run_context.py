from __future__ import annotations

import hashlib
import json
import logging
import platform
from importlib import metadata
from typing import Any, Dict, Optional


LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"

_LIBRARIES = ("numpy", "scipy", "pandas", "matplotlib", "PyYAML")


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT, force=True)


def _device_identity() -> str:
    host = platform.node() or "unknown-host"
    sysname = platform.system() or "unknown-os"
    return f"{sysname}:{host}"


def _library_versions() -> Dict[str, str]:
    out: Dict[str, str] = {"python": platform.python_version()}
    for name in _LIBRARIES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "missing"
    return out


def config_digest(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def build_run_context(
    *,
    command: str,
    seed: Optional[int] = None,
    config_text: Optional[str] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    JSON-serializable description of a run. Kept out of the CSV outputs so those
    stay byte-identical across machines.
    """
    d: Dict[str, Any] = {
        "command": command,
        "device": _device_identity(),
        "versions": _library_versions(),
    }
    if seed is not None:
        d["seed"] = int(seed)
    if config_text is not None:
        d["config_sha256"] = config_digest(config_text)
    if extra:
        for k, v in extra.items():
            d[str(k)] = v
    return d


def encode_run_context(ctx: Dict[str, Any]) -> str:
    return json.dumps(ctx, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n"
