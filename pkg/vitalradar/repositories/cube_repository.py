import logging
import struct
from pathlib import Path

import numpy as np

from vitalradar.core.exceptions import StageException
from vitalradar.models.radar_models import DataCube
from vitalradar.schemas.radar_schemas import RadarConfig

logger = logging.getLogger(__name__)

CUBE_MAGIC = b"VBC1"
# Radar fields echoed in the header, in order
ECHO_FIELDS: tuple[str, ...] = (
    "carrier_frequency",
    "chirp_slope",
    "idle_time",
    "adc_start_time",
    "ramp_end_time",
    "adc_sample_rate",
    "frame_duration",
)
_HEADER = struct.Struct("<4s4I7d32s")


class CubeRepository:
    """Binary persistence of raw data cubes (magic VBC1, little-endian complex64 payload)"""

    FILENAME = "cube.vbc"

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def path(self) -> Path:
        return self.root / self.FILENAME

    def exists(self) -> bool:
        return self.path.is_file()

    def save(self, cube: DataCube, config_digest: bytes) -> Path:
        """
        Write a cube with its radar echo fields and config digest.

        Args:
            cube: Data cube to store
            config_digest: 32-byte SHA-256 of the run configuration

        Returns:
            Path of the written file
        """
        self.root.mkdir(parents=True, exist_ok=True)
        header = _HEADER.pack(
            CUBE_MAGIC,
            *cube.samples.shape,
            *(float(getattr(cube.config, name)) for name in ECHO_FIELDS),
            config_digest,
        )
        with open(self.path, "wb") as handle:
            handle.write(header)
            handle.write(np.ascontiguousarray(cube.samples, dtype="<c8").tobytes())
        logger.info("Wrote cube %s to %s", cube.samples.shape, self.path)
        return self.path

    def read_header(self) -> tuple[tuple[int, ...], dict[str, float], bytes]:
        """
        Returns:
            (dims, echo fields, config digest)

        Raises:
            StageException: If the file is missing or not a VBC1 cube
        """
        if not self.exists():
            raise StageException(f"{self.path} not found; run the simulate stage first", stage="simulate")
        with open(self.path, "rb") as handle:
            raw = handle.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise StageException(f"{self.path} is truncated", stage="simulate")
        magic, *rest = _HEADER.unpack(raw)
        if magic != CUBE_MAGIC:
            raise StageException(f"{self.path} is not a VBC1 cube", stage="simulate")
        dims = tuple(rest[:4])
        echo = dict(zip(ECHO_FIELDS, rest[4:11]))
        return dims, echo, rest[11]

    def load(self, config: RadarConfig) -> tuple[DataCube, bytes]:
        """
        Read a cube back against the radar configuration that produced it.

        Args:
            config: Radar configuration of the run

        Returns:
            (cube, config digest stored in the header)

        Raises:
            StageException: If the file is missing, truncated or was written
                with a different radar configuration
        """
        dims, echo, digest = self.read_header()
        for name, value in echo.items():
            if value != float(getattr(config, name)):
                raise StageException(
                    f"cube {name}={value} does not match the run configuration", stage="simulate"
                )
        count = int(np.prod(dims))
        samples = np.fromfile(self.path, dtype="<c8", count=count, offset=_HEADER.size)
        if samples.size != count:
            raise StageException(f"{self.path} is truncated", stage="simulate")
        return DataCube(samples=samples.reshape(dims).astype(np.complex64), config=config), digest
