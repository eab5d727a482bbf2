"""JSON-lines reading and writing."""
import json
from pathlib import Path
from typing import Iterable, Iterator, List

from ..errors import DatasetError


def write_jsonl(path: Path, records: Iterable[dict]) -> int:
    """Write one compact JSON object per line; returns the number of lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, separators=(",", ":")))
            f.write("\n")
            count += 1
    return count


def iter_jsonl(path: Path) -> Iterator[dict]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise DatasetError(f"{path}:{lineno}: invalid JSON ({e})")
    except FileNotFoundError:
        raise DatasetError(f"file not found: {path}")


def read_jsonl(path: Path) -> List[dict]:
    return list(iter_jsonl(path))
