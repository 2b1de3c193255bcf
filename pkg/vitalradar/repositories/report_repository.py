import json
import logging
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, ValidationError

from vitalradar.core.exceptions import StageException
from vitalradar.schemas.pipeline_schemas import StageRecord

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class ReportRepository:
    """JSON reports (sorted keys) and the stage marker"""

    STAGE_FILE = "stage.json"

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def save(self, name: str, payload: BaseModel | dict) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
        path = self.path(name)
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        logger.debug("Wrote %s", path)
        return path

    def load(self, name: str, model: type[ModelT], stage: str | None = None) -> ModelT:
        """
        Raises:
            StageException: If the report is missing or does not validate
        """
        path = self.path(name)
        if not path.is_file():
            hint = f"; run the {stage} stage first" if stage else ""
            raise StageException(f"{path} not found{hint}", stage=stage)
        try:
            return model.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise StageException(f"{path} is invalid: {exc}", stage=stage) from exc

    def load_stage(self) -> StageRecord:
        path = self.path(self.STAGE_FILE)
        if not path.is_file():
            return StageRecord()
        return StageRecord.model_validate_json(path.read_text(encoding="utf-8"))

    def mark_completed(self, stage: str, config_hash: str) -> StageRecord:
        record = self.load_stage()
        completed = [s for s in record.completed if s != stage] + [stage]
        record = StageRecord(config_hash=config_hash, completed=completed)
        self.save(self.STAGE_FILE, record)
        return record

    def mark_failed(self, stage: str, error: str, config_hash: str | None) -> StageRecord:
        record = self.load_stage()
        record = StageRecord(
            config_hash=config_hash or record.config_hash,
            completed=[s for s in record.completed if s != stage],
            failed=stage,
            error=error,
        )
        self.save(self.STAGE_FILE, record)
        return record
