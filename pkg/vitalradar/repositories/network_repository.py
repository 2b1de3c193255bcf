import json
import logging
import struct
from pathlib import Path

import numpy as np

from vitalradar.core.exceptions import ConfigurationException, StageException
from vitalradar.models.posture_models import NetworkParams
from vitalradar.schemas.posture_schemas import NetworkArchitecture

logger = logging.getLogger(__name__)

NETWORK_MAGIC = b"VBNN"
NETWORK_VERSION = 1


class NetworkRepository:
    """
    Versioned binary storage of trained network parameters.

    Layout (little-endian): magic "VBNN", u32 version, u32 length + architecture
    JSON, 32-byte config digest, u32 tensor count, then per tensor u16 name
    length + name, u32 ndim, u32 dims; the float32 row-major data of all
    tensors follows in table order.
    """

    FILENAME = "network.vbnn"

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def path(self) -> Path:
        return self.root / self.FILENAME

    def exists(self) -> bool:
        return self.path.is_file()

    def save(self, params: NetworkParams, config_digest: bytes) -> Path:
        params.validate()
        self.root.mkdir(parents=True, exist_ok=True)
        architecture = json.dumps(
            params.architecture.model_dump(mode="json"), sort_keys=True
        ).encode("utf-8")
        names = list(params.expected_shapes())

        chunks = [
            NETWORK_MAGIC,
            struct.pack("<II", NETWORK_VERSION, len(architecture)),
            architecture,
            config_digest,
            struct.pack("<I", len(names)),
        ]
        for name in names:
            encoded = name.encode("utf-8")
            shape = params.tensors[name].shape
            chunks.append(struct.pack(f"<H{len(encoded)}sI{len(shape)}I", len(encoded), encoded, len(shape), *shape))
        for name in names:
            chunks.append(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())

        self.path.write_bytes(b"".join(chunks))
        logger.info("Wrote network (%d tensors) to %s", len(names), self.path)
        return self.path

    def load(self) -> tuple[NetworkParams, bytes]:
        """
        Returns:
            (params as float64, config digest)

        Raises:
            StageException: If the file is missing or malformed
        """
        if not self.exists():
            raise StageException(f"{self.path} not found; run the train stage first", stage="train")
        raw = self.path.read_bytes()
        try:
            return self._decode(raw)
        except (struct.error, ValueError, ConfigurationException) as exc:
            raise StageException(f"{self.path} is not a valid network file: {exc}", stage="train") from exc

    def _decode(self, raw: bytes) -> tuple[NetworkParams, bytes]:
        if raw[:4] != NETWORK_MAGIC:
            raise ValueError("bad magic")
        version, arch_length = struct.unpack_from("<II", raw, 4)
        if version != NETWORK_VERSION:
            raise ValueError(f"unsupported version {version}")
        offset = 12
        architecture = NetworkArchitecture.model_validate_json(raw[offset : offset + arch_length])
        offset += arch_length
        digest = raw[offset : offset + 32]
        offset += 32
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4

        table: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            (name_length,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_length].decode("utf-8")
            offset += name_length
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            table.append((name, tuple(shape)))

        params = NetworkParams(architecture=architecture)
        for name, shape in table:
            size = int(np.prod(shape))
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            params.tensors[name] = data.reshape(shape).astype(np.float64)
        if offset != len(raw):
            raise ValueError("trailing bytes after tensor data")
        params.validate()
        return params, digest
