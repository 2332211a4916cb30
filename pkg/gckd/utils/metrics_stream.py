"""JSON-lines metrics stream and single-document reports.

Records carry the config fingerprint and no wall-clock data, so two runs
with the same settings produce byte-identical files.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from gckd.errors import DataIOError

logger = logging.getLogger(__name__)


def _encode(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=False)


class MetricsStream:
    """Append-only writer; the file is truncated when the stream opens."""

    def __init__(self, path: Path, fingerprint: str) -> None:
        self.path = Path(path)
        self.fingerprint = fingerprint
        self.count = 0
        self._file = None

    def __enter__(self) -> "MetricsStream":
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "w", encoding="utf-8", newline="\n")
        except OSError as e:
            raise DataIOError(f"cannot open metrics stream {self.path}: {e}") from e
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, record: Dict[str, Any]) -> None:
        if self._file is None:
            raise DataIOError(f"metrics stream {self.path} is not open")
        line = dict(record)
        line["fingerprint"] = self.fingerprint
        self._file.write(_encode(line) + "\n")
        self.count += 1

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            logger.debug(f"closed metrics stream {self.path} after {self.count} records")


def read_stream(path: Path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise DataIOError(f"cannot read metrics stream {path}: {e}") from e


def write_report(path: Path, report: Dict[str, Any], fingerprint: Optional[str] = None) -> Path:
    """Write one JSON document (sorted keys, trailing newline)."""
    path = Path(path)
    document = dict(report)
    if fingerprint is not None:
        document["fingerprint"] = fingerprint
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(document, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write report {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def read_report(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise DataIOError(f"cannot read report {path}: {e}") from e
    except ValueError as e:
        raise DataIOError(f"malformed report {path}: {e}") from e
