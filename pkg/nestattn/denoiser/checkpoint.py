"""
Versioned binary checkpoints

Layout (all integers little-endian u32):

    magic      8 bytes  b"NESTATTN"
    version    u32
    config     u32 length + canonical config text (UTF-8)
    count      u32 number of parameter records
    record     u32 name length, name (UTF-8), u32 rank, rank x u32 extents,
               raw little-endian float64 payload

The embedded config is enough to rebuild the modules; loading then restores
every named tensor, so forward passes after a round trip are bit-identical.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional, Union

import numpy as np
import torch

from ..core.config import RunConfig, parse_config_text
from ..core.exceptions import CheckpointError
from ..core.logging import get_logger
from ..core.models import MechanismKind
from ..core.tensor import DTYPE, RandomSource
from ..data.vocab import DEFAULT_VOCABULARY
from .adapter import SubjectAdapter
from .model import ToyDenoiser
from .schedule import DiffusionSchedule

logger = get_logger(__name__)

MAGIC = b"NESTATTN"
FORMAT_VERSION = 1
HOST_PREFIX = "host."
ADAPTER_PREFIX = "adapter."

_U32 = struct.Struct("<I")

# Config sections a stage-B run must share with its host checkpoint
HOST_SECTIONS = ("data", "model", "schedule")


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def has_adapter(self) -> bool:
        return any(name.startswith(ADAPTER_PREFIX) for name in self.tensors)


def _write_u32(handle: BinaryIO, value: int) -> None:
    handle.write(_U32.pack(value))


def _read_exact(handle: BinaryIO, size: int, path: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise CheckpointError(f"Truncated checkpoint: {path}", path=path)
    return data


def _read_u32(handle: BinaryIO, path: str) -> int:
    return _U32.unpack(_read_exact(handle, 4, path))[0]


def save_checkpoint(path: Union[str, Path], config: RunConfig, tensors: Mapping[str, torch.Tensor]) -> Path:
    """Write named tensors (sorted by name) with the canonical config echo"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_bytes = config.canonical_text().encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        _write_u32(handle, FORMAT_VERSION)
        _write_u32(handle, len(config_bytes))
        handle.write(config_bytes)
        _write_u32(handle, len(tensors))
        for name in sorted(tensors):
            array = tensors[name].detach().cpu().numpy().astype("<f8")
            name_bytes = name.encode("utf-8")
            _write_u32(handle, len(name_bytes))
            handle.write(name_bytes)
            _write_u32(handle, array.ndim)
            for extent in array.shape:
                _write_u32(handle, extent)
            handle.write(np.ascontiguousarray(array).tobytes())
    logger.info("Saved checkpoint", path=str(path), tensors=len(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}", path=str(path))
    where = str(path)
    with open(path, "rb") as handle:
        if _read_exact(handle, len(MAGIC), where) != MAGIC:
            raise CheckpointError(f"Not a checkpoint (bad magic): {path}", path=where)
        version = _read_u32(handle, where)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}", path=where)
        config_text = _read_exact(handle, _read_u32(handle, where), where).decode("utf-8")
        config = parse_config_text(config_text)
        tensors: Dict[str, torch.Tensor] = {}
        for _ in range(_read_u32(handle, where)):
            name = _read_exact(handle, _read_u32(handle, where), where).decode("utf-8")
            rank = _read_u32(handle, where)
            shape = tuple(_read_u32(handle, where) for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(handle, 8 * count, where)
            array = np.frombuffer(payload, dtype="<f8").reshape(shape)
            tensors[name] = torch.from_numpy(array.astype(np.float64)).to(DTYPE)
        if handle.read(1):
            raise CheckpointError(f"Trailing bytes after the last record: {path}", path=where)
    return Checkpoint(config=config, tensors=tensors, version=version)


def build_host(config: RunConfig) -> ToyDenoiser:
    return ToyDenoiser(config.model, config.data.image_size, len(DEFAULT_VOCABULARY), RandomSource(config.model.seed))


def build_adapter(config: RunConfig, host: ToyDenoiser, mechanism: Optional[MechanismKind] = None) -> SubjectAdapter:
    mechanism = mechanism or config.personalization.mechanism
    return SubjectAdapter.build(mechanism, host, config.encoder, config.personalization)


def bundle_tensors(host: ToyDenoiser, adapter: Optional[SubjectAdapter] = None) -> Dict[str, torch.Tensor]:
    tensors = {HOST_PREFIX + k: v for k, v in host.state_dict().items()}
    if adapter is not None:
        tensors.update({ADAPTER_PREFIX + k: v for k, v in adapter.state_dict().items()})
    return tensors


def _restore(module: torch.nn.Module, tensors: Mapping[str, torch.Tensor], prefix: str, path: str) -> None:
    state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    expected = module.state_dict()
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"Checkpoint lacks parameter {prefix}{missing[0]}", path=path,
                              parameter=prefix + missing[0])
    unexpected = sorted(set(state) - set(expected))
    if unexpected:
        raise CheckpointError(f"Checkpoint has unknown parameter {prefix}{unexpected[0]}", path=path,
                              parameter=prefix + unexpected[0])
    for name, value in state.items():
        if tuple(expected[name].shape) != tuple(value.shape):
            raise CheckpointError(f"Shape mismatch for {prefix}{name}", path=path, parameter=prefix + name)
    module.load_state_dict(state, strict=True)


@dataclass
class ModelBundle:
    """Everything needed to sample: config, host, optional adapter, schedule"""

    config: RunConfig
    host: ToyDenoiser
    schedule: DiffusionSchedule
    adapter: Optional[SubjectAdapter] = None

    @property
    def mechanism(self) -> Optional[MechanismKind]:
        return None if self.adapter is None else self.adapter.mechanism

    def tensors(self) -> Dict[str, torch.Tensor]:
        return bundle_tensors(self.host, self.adapter)

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, self.config, self.tensors())


def load_bundle(path: Union[str, Path]) -> ModelBundle:
    """Rebuild host (and adapter, if stored) from a checkpoint"""
    checkpoint = load_checkpoint(path)
    config = checkpoint.config
    host = build_host(config)
    _restore(host, checkpoint.tensors, HOST_PREFIX, str(path))
    host.requires_grad_(False)
    adapter = None
    if checkpoint.has_adapter:
        adapter = build_adapter(config, host)
        _restore(adapter, checkpoint.tensors, ADAPTER_PREFIX, str(path))
        adapter.requires_grad_(False)
    return ModelBundle(config=config, host=host, schedule=DiffusionSchedule.from_config(config.schedule),
                       adapter=adapter)


def check_host_compatible(host_config: RunConfig, config: RunConfig, path: str = "") -> None:
    """A stage-B config must agree with its host checkpoint on data, model and schedule"""
    host_payload = host_config.model_dump(mode="json")
    payload = config.model_dump(mode="json")
    for section in HOST_SECTIONS:
        if host_payload[section] != payload[section]:
            raise CheckpointError(f"Host checkpoint was trained with a different [{section}] section",
                                  path=path, parameter=section)
