"""Runtime settings from an INI file plus ``TERMSUGGEST_*`` environment overrides.

Example ``termsuggest.ini``::

    [termsuggest]
    storage_path = /var/lib/termsuggest
    workers = 2
    rate_limit = 100
    admin_token = change-me
    listen = 127.0.0.1:8080
    job_timeout =

Each key can be overridden by the upper-cased environment variable with the
``TERMSUGGEST_`` prefix, e.g. ``TERMSUGGEST_STORAGE_PATH``. The file itself
is found via ``--config``, then ``TERMSUGGEST_CONFIG``, then
``./termsuggest.ini`` if present.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields
from pathlib import Path

ENV_PREFIX = "TERMSUGGEST_"
SECTION = "termsuggest"


@dataclass
class Settings:
    storage_path: str = "./termsuggest-data"
    workers: int = 2
    rate_limit: float = 100.0
    admin_token: str | None = None
    listen: str = "127.0.0.1:8080"
    job_timeout: float | None = None


def _coerce(name: str, raw: str):
    raw = raw.strip()
    if name in ("admin_token", "job_timeout") and raw == "":
        return None
    if name == "workers":
        return int(raw)
    if name in ("rate_limit", "job_timeout"):
        return float(raw)
    return raw


def load_settings(path: str | Path | None = None, environ=None) -> Settings:
    environ = os.environ if environ is None else environ
    values: dict = {}
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    if path is None and Path("termsuggest.ini").exists():
        path = "termsuggest.ini"
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {path}")
        if parser.has_section(SECTION):
            values.update(parser.items(SECTION))
    for f in fields(Settings):
        env = environ.get(ENV_PREFIX + f.name.upper())
        if env is not None:
            values[f.name] = env
    known = {f.name for f in fields(Settings)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown setting(s): {', '.join(sorted(unknown))}")
    return Settings(**{k: _coerce(k, str(v)) for k, v in values.items()})


def parse_listen(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
