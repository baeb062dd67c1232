from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from labeldiff.enums import Variant
from labeldiff.exceptions import ConfigError, LabelDiffError
from labeldiff.training.config import RunConfig
from labeldiff.training.trainer import run_experiment

logger = logging.getLogger(__name__)

LADDER = (Variant.BASIC, Variant.C1, Variant.C2, Variant.FULL)


@dataclass
class AblationCell:
    variant: str
    seed: int
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None
    status: str = 'ok'
    error: str = ''


@dataclass
class AblationReport:
    cells: List[AblationCell] = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        table = pd.DataFrame([asdict(cell) for cell in self.cells], columns=[item.name for item in fields(AblationCell)])
        return table.astype({'accuracy': float, 'macro_f1': float})

    def means(self) -> pd.DataFrame:
        """
        Per-variant means over the cells that finished, in ladder order.
        """
        table = self.table()
        done = table[table['status'] == 'ok']
        means = done.groupby('variant', sort=False)[['accuracy', 'macro_f1']].mean()
        order = [variant for variant in dict.fromkeys(table['variant']) if variant in means.index]
        return means.loc[order]

    def mean_accuracy(self) -> Dict[str, float]:
        return {variant: float(value) for variant, value in self.means()['accuracy'].items()}

    def render(self) -> str:
        lines = [
            self.table().to_string(index=False, na_rep='-', float_format=lambda value: f'{value:.4f}'),
            '',
            'means',
            self.means().to_string(float_format=lambda value: f'{value:.4f}'),
        ]
        return '\n'.join(lines) + '\n'


def run_ablation(
    base_config: RunConfig,
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    variants: Sequence[Variant] = LADDER,
    progress: bool = True,
) -> AblationReport:
    """
    Train every variant for every seed on the same split; a failing cell is recorded
    and the sweep moves on.
    """
    if not seeds:
        raise ConfigError('ablation needs at least one seed')
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = AblationReport()
    for seed in seeds:
        for variant in variants:
            config = base_config.with_overrides(variant=variant, seed=seed)
            cell = AblationCell(variant=config.variant.value, seed=int(seed))
            try:
                result = run_experiment(config, out_dir / f'{cell.variant}_seed{seed}', progress=progress)
            except (LabelDiffError, RuntimeError) as e:
                logger.error('%s seed %d failed: %s', cell.variant, seed, e)
                cell.status, cell.error = 'failed', f'{type(e).__name__}: {e}'
            else:
                cell.accuracy = result.metrics['best_accuracy']
                cell.macro_f1 = result.metrics['best_macro_f1']
            report.cells.append(cell)

    report.table().to_csv(out_dir / 'ablation.csv', index=False, float_format='%.6f')
    (out_dir / 'ablation.txt').write_text(report.render())
    logger.info('ablation means:\n%s', report.means().to_string())
    return report
