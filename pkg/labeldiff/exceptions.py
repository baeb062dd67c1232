from typing import Any, Dict, Optional


class LabelDiffError(Exception):
    exit_code = 4
    code = 'runtime'


class ConfigError(LabelDiffError):
    exit_code = 2
    code = 'config'


class DataError(LabelDiffError):
    exit_code = 3
    code = 'data'


class LabelError(DataError):
    code = 'label'


class CheckpointError(DataError):
    code = 'checkpoint'


class ShapeError(LabelDiffError, ValueError):
    code = 'shape'


class TimestepError(LabelDiffError, ValueError):
    code = 'timestep'


class NonFiniteLossError(LabelDiffError):
    def __init__(self, batch_index: int, losses: Dict[str, float], config: Optional[Dict[str, Any]] = None):
        super().__init__(f'non-finite loss at batch {batch_index}: {losses}; config={config}')
        self.batch_index = batch_index
        self.losses = losses
        self.config = config
