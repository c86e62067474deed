"""Flat ``key = value`` configuration files, typed lookups and the worker-count setting."""
import logging
import os
from pathlib import Path

from road_dl.errors import FormatError

log = logging.getLogger(__name__)

THREADS_ENV = "ROAD_THREADS"


def parse_key_values(text: str, source: str = "<string>") -> dict[str, str]:
    """
    Parse ``key = value`` lines.

    Blank lines and lines starting with ``#`` are skipped, a ``#`` after a value starts a
    comment, and keys are lower-cased with ``-`` read as ``_``. A repeated key keeps its
    last value.

    Raises
    ------
    FormatError
        If a non-blank line has no ``=`` or an empty key.
    """
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not sep or not key:
            raise FormatError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            log.warning("%s:%d: %s given twice; using the later value", source, number, key)
        values[key] = value.strip()
    return values


def read_key_value_file(path: str | Path) -> dict[str, str]:
    """Read a configuration file written as ``key = value`` lines."""
    path = Path(path)
    log.info("Reading configuration from %s", path)
    return parse_key_values(path.read_text(encoding="utf-8"), source=str(path))


def _convert(values: dict[str, str], key: str, kind: type, default: object) -> object:
    if key not in values or values[key] == "":
        return default
    try:
        return kind(values[key])
    except ValueError as exc:
        raise FormatError(f"{key} = {values[key]!r} is not a valid {kind.__name__}") from exc


def get_str(values: dict[str, str], key: str, default: str | None = None) -> str | None:
    """Return the raw value of ``key`` or ``default``."""
    return values.get(key, default)


def get_int(values: dict[str, str], key: str, default: int | None = None) -> int | None:
    """Return ``key`` as an integer or ``default``."""
    return _convert(values, key, int, default)  # type: ignore[return-value]


def get_float(values: dict[str, str], key: str, default: float | None = None) -> float | None:
    """Return ``key`` as a float or ``default``."""
    return _convert(values, key, float, default)  # type: ignore[return-value]


def _get_list(values: dict[str, str], key: str, kind: type, default: list | None) -> list | None:
    if key not in values or values[key] == "":
        return default
    items = [item.strip() for item in values[key].split(",") if item.strip()]
    try:
        return [kind(item) for item in items]
    except ValueError as exc:
        raise FormatError(f"{key} = {values[key]!r} is not a list of {kind.__name__}") from exc


def get_int_list(values: dict[str, str], key: str, default: list[int] | None = None) -> list[int] | None:
    """Return a comma-separated ``key`` as a list of integers or ``default``."""
    return _get_list(values, key, int, default)


def get_str_list(values: dict[str, str], key: str, default: list[str] | None = None) -> list[str] | None:
    """Return a comma-separated ``key`` as a list of strings or ``default``."""
    return _get_list(values, key, str, default)


def resolve_workers(requested: int | None = None) -> int:
    """
    Number of worker threads to use.

    An explicit positive ``requested`` wins. Otherwise ``ROAD_THREADS`` is read; unset, empty
    or ``0`` means one worker per CPU.

    Raises
    ------
    FormatError
        If ``ROAD_THREADS`` is not a non-negative integer.
    """
    if requested is not None and requested > 0:
        return requested
    raw = os.environ.get(THREADS_ENV, "").strip()
    threads = 0
    if raw:
        try:
            threads = int(raw)
        except ValueError as exc:
            raise FormatError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}") from exc
        if threads < 0:
            raise FormatError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}")
    if threads == 0:
        threads = os.cpu_count() or 1
    return threads


def write_manifest(path: str | Path, entries: dict[str, object]) -> None:
    """Write ``key = value`` lines in the given order, readable by :func:`read_key_value_file`."""
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("Wrote manifest %s", path)
