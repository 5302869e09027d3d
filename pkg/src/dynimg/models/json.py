# noqa: D100
from dataclasses import fields, is_dataclass
from pathlib import Path

import orjson

# dataclasses pass through to _default so their fields get sorted too
_OPTIONS = (
    orjson.OPT_SERIALIZE_NUMPY
    | orjson.OPT_SORT_KEYS
    | orjson.OPT_PASSTHROUGH_DATACLASS
)


def _default(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: getattr(obj, f.name) for f in fields(obj)}
    if isinstance(obj, set):
        return sorted(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError


def dumps(obj, indent: bool = True) -> bytes:
    """Serialize ``obj`` with orjson.

    Keys are sorted, dataclass fields included, so repeated runs write
    byte-identical files. NaN floats become ``null``.
    """
    options = _OPTIONS | orjson.OPT_INDENT_2 if indent else _OPTIONS
    return orjson.dumps(obj, default=_default, option=options)


def write_json(obj, path: Path) -> None:
    """Write ``obj`` to ``path`` as indented JSON with a trailing newline."""
    path.write_bytes(dumps(obj) + b"\n")


class DataClassJSONMixin:
    """Use orjson to serialize dataclasses.dataclass."""

    def to_json(self, decode=True, indent=True) -> str | bytes:
        """Serialize the dataclass.

        Args:
            decode: decode utf-8 bytes
            indent: pretty-print with two spaces

        Returns:
            JSON either as str or bytes, depending on value of 'decode'
        """
        payload = dumps(self, indent=indent)
        if decode:
            return payload.decode("utf-8")
        else:
            return payload

    def to_dict(self) -> dict:
        """Return the JSON-compatible dictionary form."""
        return orjson.loads(dumps(self, indent=False))
