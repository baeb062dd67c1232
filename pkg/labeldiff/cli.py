from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from labeldiff.data.loaders import read_image, write_image_folder
from labeldiff.data.synthetic import synth_generate
from labeldiff.data.types import ImageDataset
from labeldiff.diffusion.sampler import timestep_sequence
from labeldiff.enums import F1Average, Variant
from labeldiff.evaluation.ablation import LADDER, run_ablation
from labeldiff.evaluation.viz import trajectory_viz
from labeldiff.exceptions import DataError, LabelDiffError
from labeldiff.training.checkpoint import load_model
from labeldiff.training.config import PRESETS, RunConfig, coerce_enum, load_config
from labeldiff.training.trainer import Predictions, evaluate, predict, prepare_splits, run_experiment, write_json

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

logger = logging.getLogger(__name__)


def comma_floats(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated numbers, got {text!r}') from None


def comma_ints(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated integers, got {text!r}') from None


def add_global_flags(parser: argparse.ArgumentParser, default):
    parser.add_argument('--config', type=Path, default=default, help='YAML (or TOML) run config')
    parser.add_argument('--preset', choices=sorted(PRESETS), default=default, help='built-in config when --config is absent')
    parser.add_argument('--seed', type=int, default=default)
    parser.add_argument('--out-dir', type=Path, default=default)
    parser.add_argument('--log-level', default=default, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='labeldiff', description='Label-space diffusion image classifier.')
    add_global_flags(parser, None)
    # Global flags are accepted after the subcommand too.
    common = argparse.ArgumentParser(add_help=False)
    add_global_flags(common, argparse.SUPPRESS)
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-data', parents=[common], help='write a synthetic image-folder dataset')
    gen.add_argument('--classes', type=int)
    gen.add_argument('--count', type=int)
    gen.add_argument('--noise', type=float)
    gen.add_argument('--blur', type=float)
    gen.add_argument('--imbalance', type=comma_floats, help='comma-separated class weights')
    gen.add_argument('--image-size', type=int)
    gen.add_argument('--out', type=Path, help='dataset folder (default: <out-dir>/data)')

    train = commands.add_parser('train', parents=[common], help='train one variant')
    train.add_argument('--variant', choices=[variant.value for variant in Variant])
    train.add_argument('--resume', type=Path, help='checkpoint to continue from')

    infer = commands.add_parser('infer', parents=[common], help='predict classes with a checkpoint')
    infer.add_argument('--checkpoint', type=Path, required=True)
    infer.add_argument('--input', type=Path, help='PNG image or folder of PNG images (default: the configured test split)')
    infer.add_argument('--steps', type=int, help='reverse steps (default: from the checkpoint config)')
    infer.add_argument('--votes', type=int)
    infer.add_argument('--trajectory-out', type=Path, help='write the reverse-chain states of every image to this CSV')
    infer.add_argument('--record-steps', type=comma_ints, help='timesteps to keep in the trajectory (default: all)')

    scoring = commands.add_parser('eval', parents=[common], help='score a checkpoint on the test split')
    scoring.add_argument('--checkpoint', type=Path, required=True)
    scoring.add_argument('--steps', type=int)
    scoring.add_argument('--f1-average', choices=[average.value for average in F1Average], default=F1Average.MACRO.value)

    ablate = commands.add_parser('ablate', parents=[common], help='train the variant ladder over seeds')
    ablate.add_argument('--seeds', type=comma_ints, default=[0, 1, 2])
    ablate.add_argument('--variants', type=lambda text: text.split(','), default=None)

    viz = commands.add_parser('viz', parents=[common], help='plot reverse-chain trajectories')
    viz.add_argument('--checkpoint', type=Path, required=True)
    viz.add_argument('--steps-to-record', type=comma_ints, required=True)
    viz.add_argument('--infer-steps', type=int)
    viz.add_argument('--limit', type=int, help='use only the first N test images')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = PRESETS[args.preset or 'desk']()
    return config.with_overrides(seed=args.seed)


def out_dir(args: argparse.Namespace, default: str) -> Path:
    return args.out_dir if args.out_dir is not None else Path('runs') / default


def progress_enabled(args: argparse.Namespace) -> bool:
    return (args.log_level or 'INFO') in ('DEBUG', 'INFO')


# Commands.

def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = resolve_config(args).data
    num_classes = args.classes if args.classes is not None else spec.num_classes
    parameters = {
        'num_classes': num_classes,
        'count': args.count if args.count is not None else spec.count,
        'noise_sigma': args.noise if args.noise is not None else spec.noise_sigma,
        'blur_radius': args.blur if args.blur is not None else spec.blur_radius,
        'imbalance': args.imbalance if args.imbalance is not None else spec.imbalance,
        'seed': args.seed if args.seed is not None else spec.data_seed,
        'image_size': args.image_size if args.image_size is not None else spec.image_size,
        'channels': spec.channels,
    }
    dataset = synth_generate(**parameters)
    target = args.out if args.out is not None else out_dir(args, 'data') / 'data'
    write_image_folder(dataset, target, parameters)
    print(target)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args).with_overrides(variant=args.variant)
    result = run_experiment(config, out_dir(args, config.variant.value), resume=args.resume, progress=progress_enabled(args))
    print(json.dumps({key: result.metrics[key] for key in ('best_accuracy', 'best_macro_f1', 'best_epoch')}, sort_keys=True))
    return 0


def held_out_split(args: argparse.Namespace, model_config: RunConfig) -> ImageDataset:
    config = load_config(args.config) if args.config is not None else model_config
    return prepare_splits(config)[1]


def read_inputs(source: Path, config: RunConfig) -> ImageDataset:
    if source.is_file():
        paths = [source]
    else:
        paths = sorted(path for path in source.rglob('*') if path.suffix.lower() == '.png')
    if not paths:
        raise DataError(f'no PNG images at {source}')
    images = np.stack([read_image(path, config.data.image_size, config.data.channels) for path in paths])
    return ImageDataset(
        images=images,
        labels=np.zeros(len(paths), dtype=np.int64),
        class_names=tuple(f'class_{k}' for k in range(config.num_classes)),
        paths=tuple(str(path) for path in paths),
    )


def trajectory_frame(predictions: Predictions, steps: Sequence[int]) -> pd.DataFrame:
    """One row per image and recorded timestep, in chain order."""
    frames = []
    for t in steps:
        frame = pd.DataFrame({'index': np.arange(len(predictions.classes)), 't': t})
        for k in range(predictions.states[t].shape[1]):
            frame[f'y_t_{k}'] = predictions.states[t][:, k]
        for k in range(predictions.trajectory[t].shape[1]):
            frame[f'y0_{k}'] = predictions.trajectory[t][:, k]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def cmd_infer(args: argparse.Namespace) -> int:
    model, checkpoint = load_model(args.checkpoint)
    class_names = checkpoint.metadata.get('class_names') or [f'class_{k}' for k in range(model.num_classes)]
    dataset = read_inputs(args.input, model.config) if args.input is not None else held_out_split(args, model.config)
    seed = args.seed if args.seed is not None else model.config.seed
    record_steps: List[int] = []
    if args.trajectory_out is not None:
        schedule = timestep_sequence(model.schedule.T, args.steps or model.config.diffusion.infer_steps)
        record_steps = args.record_steps or schedule
    predictions = predict(model, dataset, args.steps, seed, args.votes, record_steps=record_steps)
    classes, estimates = predictions.classes, predictions.estimates

    frame = pd.DataFrame({
        'path': list(dataset.paths) if dataset.paths else [f'#{index}' for index in range(len(dataset))],
        'class_index': classes,
        'class_name': [class_names[k] for k in classes],
    })
    for k in range(estimates.shape[1]):
        frame[f'y0_{k}'] = estimates[:, k]
    target = out_dir(args, 'infer')
    target.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target / 'predictions.csv', index=False, float_format='%.6f')
    print(target / 'predictions.csv')
    if args.trajectory_out is not None:
        args.trajectory_out.parent.mkdir(parents=True, exist_ok=True)
        recorded = [t for t in schedule if t in predictions.states]
        trajectory_frame(predictions, recorded).to_csv(args.trajectory_out, index=False, float_format='%.6f')
        print(args.trajectory_out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_model(args.checkpoint)
    dataset = held_out_split(args, model.config)
    seed = args.seed if args.seed is not None else model.config.seed
    report = evaluate(model, dataset, args.steps, seed, F1Average(args.f1_average))
    metrics = {'checkpoint': str(args.checkpoint), 'f1_average': args.f1_average, **report.as_dict()}
    target = out_dir(args, 'eval')
    target.mkdir(parents=True, exist_ok=True)
    write_json(target / 'metrics.json', metrics)
    print(json.dumps({'accuracy': report.accuracy, 'f1': report.f1}, sort_keys=True))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    variants = LADDER if args.variants is None else [coerce_enum(Variant, name, 'variants') for name in args.variants]
    report = run_ablation(config, args.seeds, out_dir(args, 'ablation'), variants, progress=progress_enabled(args))
    print(report.render(), end='')
    return 0 if all(cell.status == 'ok' for cell in report.cells) else 4


def cmd_viz(args: argparse.Namespace) -> int:
    model, _ = load_model(args.checkpoint)
    dataset = held_out_split(args, model.config)
    if args.limit is not None:
        dataset = dataset.subset(range(min(args.limit, len(dataset))))
    seed = args.seed if args.seed is not None else model.config.seed
    result = trajectory_viz(model, dataset, args.steps_to_record, out_dir(args, 'viz'), seed, args.infer_steps)
    for t, value in result.silhouettes.items():
        print(f't={t} silhouette={value:.4f}')
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'viz': cmd_viz,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level or 'INFO', format=LOG_FORMAT, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except LabelDiffError as e:
        print(f'error[{e.code}]: {e}'.replace('\n', ' '), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f'error[io]: {e}'.replace('\n', ' '), file=sys.stderr)
        return DataError.exit_code
    except Exception as e:
        logger.debug('unexpected failure', exc_info=True)
        print(f'error[runtime]: {type(e).__name__}: {e}'.replace('\n', ' '), file=sys.stderr)
        return LabelDiffError.exit_code
