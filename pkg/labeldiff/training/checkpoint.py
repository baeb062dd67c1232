"""
Self-describing checkpoint file.

    magic      b'DMIC1'
    metadata   u32 length + UTF-8 JSON (config snapshot, epoch, metric history, ...)
    count      u32 number of tensors
    tensors    u16 length + UTF-8 name, u8 rank + u32 dims, little-endian f32 data
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import torch

from labeldiff.exceptions import CheckpointError, ConfigError
from labeldiff.io import MemoryViewReader, MemoryViewWriter, read_dims, write_dims
from labeldiff.models.classifier import DiffusionClassifier
from labeldiff.training.config import RunConfig

logger = logging.getLogger(__name__)

MAGIC = b'DMIC1'
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    metadata: Dict[str, Any]
    tensors: Dict[str, np.ndarray] = field(default_factory=OrderedDict)

    @property
    def config(self) -> RunConfig:
        try:
            return RunConfig.from_dict(self.metadata['config'])
        except KeyError:
            raise CheckpointError('checkpoint metadata has no config snapshot') from None
        except ConfigError as e:
            raise CheckpointError(f'checkpoint config is invalid: {e}') from e

    @property
    def epoch(self) -> int:
        return int(self.metadata.get('epoch', 0))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    writer = MemoryViewWriter()
    writer.write(MAGIC)
    writer.write_text(json.dumps(checkpoint.metadata, sort_keys=True))
    writer.write_u32(len(checkpoint.tensors))
    for name, values in checkpoint.tensors.items():
        writer.write_string(name)
        write_dims(writer, values.shape)
        writer.write_f32_array(values)
    return writer.getvalue()


def decode_checkpoint(data: Union[bytes, memoryview]) -> Checkpoint:
    reader = MemoryViewReader(data)
    try:
        if bytes(reader.read(len(MAGIC))) != MAGIC:
            raise CheckpointError('not a checkpoint file: bad magic')
        metadata = json.loads(reader.read_text())
        tensors: Dict[str, np.ndarray] = OrderedDict()
        for _ in range(reader.read_u32()):
            name = reader.read_string()
            dims = read_dims(reader)
            tensors[name] = reader.read_f32_array(math.prod(dims)).reshape(dims)
    except EOFError as e:
        raise CheckpointError(f'truncated checkpoint: {e}') from e
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'corrupt checkpoint metadata: {e}') from e
    if not reader.is_eof():
        raise CheckpointError(f'{reader.remaining()} trailing bytes after the tensor table')
    return Checkpoint(metadata=metadata, tensors=tensors)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info('saved checkpoint %s (epoch %d, %d tensors)', path, checkpoint.epoch, len(checkpoint.tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f'cannot read checkpoint {path}: {e}') from e
    try:
        return decode_checkpoint(data)
    except CheckpointError as e:
        raise CheckpointError(f'{path}: {e}') from e


# Models.

def checkpoint_from_model(model: DiffusionClassifier, **metadata: Any) -> Checkpoint:
    tensors: Dict[str, np.ndarray] = OrderedDict(
        (name, value.detach().cpu().to(torch.float32).numpy().copy())
        for name, value in model.state_dict().items()
    )
    return Checkpoint(
        metadata={'format_version': FORMAT_VERSION, 'config': model.config.to_dict(), **metadata},
        tensors=tensors,
    )


def restore_weights(model: DiffusionClassifier, checkpoint: Checkpoint):
    expected = model.state_dict()
    missing = sorted(set(expected).difference(checkpoint.tensors))
    unexpected = sorted(set(checkpoint.tensors).difference(expected))
    if missing or unexpected:
        raise CheckpointError(f'tensor table does not match the model: missing {missing}, unexpected {unexpected}')
    for name, target in expected.items():
        values = checkpoint.tensors[name]
        if tuple(values.shape) != tuple(target.shape):
            raise CheckpointError(f'{name}: checkpoint shape {values.shape} != model shape {tuple(target.shape)}')
    with torch.no_grad():
        for name, target in expected.items():
            target.copy_(torch.from_numpy(checkpoint.tensors[name]))


def load_model(path: Union[str, Path]) -> Tuple[DiffusionClassifier, Checkpoint]:
    """
    Rebuild the model from the checkpoint's own config and load its weights, in eval mode.
    """
    checkpoint = load_checkpoint(path)
    model = DiffusionClassifier(checkpoint.config)
    restore_weights(model, checkpoint)
    model.eval()
    return model, checkpoint
