"""Plain-text `key = value` run configuration and reproducibility manifests.

Each subcommand declares a schema of typed options. Values come from an
optional config file and from command-line flags (flags win); unknown keys
are rejected, and the fully resolved configuration — every key, including
defaulted seeds — is written back out as the run's manifest so the identical
run can be replayed from that file alone.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import CorruptDataError, DataFormatError, ParameterError

REQUIRED = object()  # sentinel default for options that must be provided


# ----------------------------------------------------------- value codecs


def conv_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ParameterError(f"not a boolean: {text!r}")


def conv_int_tuple(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ParameterError(f"empty integer list: {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ParameterError(f"bad integer list {text!r}: {exc}") from exc


def to_text(value) -> str:
    """Canonical string form: round-trips through the matching converter."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Option:
    name: str
    conv: type  # callable str -> value
    default: object = REQUIRED
    help: str = ""

    def parse(self, text: str):
        try:
            return self.conv(text)
        except ParameterError:
            raise
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"bad value for {self.name}: {text!r} ({exc})") from exc


# ------------------------------------------------------------ file parsing


def parse_kv_text(text: str, origin: str = "<config>") -> dict:
    """`key = value` lines -> ordered dict of raw strings.

    Blank lines and full-line `#` comments are allowed; duplicate keys and
    lines without `=` are not.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorruptDataError(f"{origin}:{lineno}: expected `key = value`, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise CorruptDataError(f"{origin}:{lineno}: empty key in {raw!r}")
        if key in values:
            raise CorruptDataError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    return values


def read_kv(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_kv_text(fh.read(), origin=str(path))
    except FileNotFoundError as exc:
        raise DataFormatError(f"no config file at {path}") from exc


def write_kv(values: dict, path) -> None:
    """Keys in sorted order, one `key = value` per line."""
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# -------------------------------------------------------------- resolution


def resolve(schema: dict, *sources: dict) -> dict:
    """Merge raw-string sources (later wins) against a schema of Options.

    Unknown keys are rejected; missing required options are an error; every
    schema key appears in the result (defaults filled in).
    """
    merged = {}
    for src in sources:
        for key, text in src.items():
            if key not in schema:
                raise ParameterError(f"unknown configuration key {key!r}")
            merged[key] = text
    out = {}
    for name, opt in schema.items():
        if name in merged:
            out[name] = opt.parse(merged[name])
        elif opt.default is REQUIRED:
            raise ParameterError(f"missing required option {name!r}")
        else:
            out[name] = opt.default
    return out


def canonical(schema: dict, values: dict) -> dict:
    """Typed values -> canonical raw strings, schema order."""
    return {name: to_text(values[name]) for name in schema}
