import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

from vitalradar.core.exceptions import StageException

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_sha256="
NUMBER_FORMAT = "%.9g"


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return NUMBER_FORMAT % value
    if hasattr(value, "item"):
        return _cell(value.item())
    return str(value)


class TableRepository:
    """CSV tables whose first line records the config hash that produced them"""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def save(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence], config_hash: str
    ) -> Path:
        """
        Write a table.

        Args:
            name: File name inside the artifact directory
            header: Column names
            rows: Row values; floats are written with 9 significant digits
            config_hash: Hex config hash for the comment line

        Returns:
            Path of the written file
        """
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            handle.write(f"{HASH_PREFIX}{config_hash}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            count = 0
            for row in rows:
                writer.writerow([_cell(value) for value in row])
                count += 1
        logger.debug("Wrote %d rows to %s", count, path)
        return path

    def load(self, name: str, stage: str | None = None) -> tuple[str, list[str], list[list[str]]]:
        """
        Returns:
            (config hash, header, rows as strings)

        Raises:
            StageException: If the table is missing or lacks the hash line
        """
        path = self.path(name)
        if not path.is_file():
            hint = f"; run the {stage} stage first" if stage else ""
            raise StageException(f"{path} not found{hint}", stage=stage)
        with open(path, newline="", encoding="utf-8") as handle:
            first = handle.readline().rstrip("\n")
            if not first.startswith(HASH_PREFIX):
                raise StageException(f"{path} has no config hash line", stage=stage)
            reader = csv.reader(handle)
            header = next(reader, [])
            rows = [row for row in reader]
        return first[len(HASH_PREFIX) :], header, rows
