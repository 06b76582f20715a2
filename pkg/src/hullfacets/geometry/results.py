import csv
import datetime
import hashlib
import io
import json
import os
import sys
from typing import Any

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from hullfacets import __version__


class RunManifest:
    def __init__(
        self,
        command: str,
        model_spec_hash: str,
        seed: int | None,
        version: str = __version__,
        timestamp: str | None = None,
    ):
        self._command = command
        self._model_spec_hash = model_spec_hash
        self._seed = seed
        self._version = version
        self._timestamp = timestamp or datetime.datetime.now(tz=datetime.timezone.utc).isoformat(timespec="seconds")

    @property
    def command(self) -> str:
        return self._command

    @property
    def model_spec_hash(self) -> str:
        return self._model_spec_hash

    @property
    def seed(self) -> int | None:
        return self._seed

    @property
    def version(self) -> str:
        return self._version

    @property
    def timestamp(self) -> str:
        return self._timestamp

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self._command,
            "model_spec_hash": self._model_spec_hash,
            "seed": self._seed,
            "version": self._version,
            "timestamp": self._timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        seed = data.get("seed")
        return cls(
            command=str(data["command"]),
            model_spec_hash=str(data["model_spec_hash"]),
            seed=None if seed in (None, "", "None") else int(seed),
            version=str(data["version"]),
            timestamp=str(data["timestamp"]),
        )

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, type(self)):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def spec_hash(spec: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()


def format_cell(value: Any, precision: int) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".{p}g".format(p=precision))
    return str(value)


def parse_cell(text: str) -> Any:
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


class ResultTable:
    """Named columns of rows, written as CSV with manifest comments or as JSON."""

    def __init__(self, columns: list[str], manifest: RunManifest | None = None, precision: int = 17):
        self._columns = list(columns)
        self._rows: list[dict[str, Any]] = []
        self._manifest = manifest
        self._precision = precision

    @property
    def columns(self) -> list[str]:
        return list(self._columns)

    @property
    def rows(self) -> list[dict[str, Any]]:
        return [dict(row) for row in self._rows]

    @property
    def manifest(self) -> RunManifest | None:
        return self._manifest

    def add(self, row: dict[str, Any]) -> None:
        missing = [column for column in self._columns if column not in row]
        if missing:
            raise KeyError("Row is missing columns: {missing}".format(missing=", ".join(missing)))
        self._rows.append({column: row[column] for column in self._columns})

    def column(self, name: str) -> list[Any]:
        return [row[name] for row in self._rows]

    def __len__(self) -> int:
        return len(self._rows)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        if self._manifest is not None:
            for key, value in self._manifest.to_dict().items():
                buffer.write("# {key}: {value}\n".format(key=key, value="" if value is None else value))
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self._columns)
        for row in self._rows:
            writer.writerow([format_cell(row[column], self._precision) for column in self._columns])
        return buffer.getvalue()

    def to_json(self) -> str:
        def rounded(value: Any) -> Any:
            if isinstance(value, float) and not isinstance(value, bool):
                return float(format_cell(value, self._precision))
            return value

        return json.dumps(
            {
                "manifest": None if self._manifest is None else self._manifest.to_dict(),
                "columns": self._columns,
                "rows": [{column: rounded(row[column]) for column in self._columns} for row in self._rows],
            }
        )

    def render(self, out: str) -> str:
        if out == "json":
            return self.to_json() + "\n"
        return self.to_csv()

    def save(self, path: str, out: str = "csv") -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="") as file:
            file.write(self.render(out))

    @classmethod
    def from_csv(cls, text: str, precision: int = 17) -> "ResultTable":
        lines = text.splitlines()
        meta: dict[str, Any] = {}
        start = 0
        while start < len(lines) and lines[start].startswith("# "):
            key, _, value = lines[start][2:].partition(": ")
            meta[key] = value
            start += 1
        reader = csv.reader(lines[start:])
        columns = next(reader)
        table = cls(columns, manifest=RunManifest.from_dict(meta) if meta else None, precision=precision)
        for record in reader:
            table.add({column: parse_cell(cell) for column, cell in zip(columns, record)})
        return table

    @classmethod
    def load_data_from_file(cls, path: str, precision: int = 17) -> "ResultTable":
        with open(path, newline="") as file:
            return cls.from_csv(file.read(), precision=precision)
