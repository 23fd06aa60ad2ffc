#!/usr/bin/env python3
"""Command-line entry point: synth, featurize, decode, analyze, bench and init-config."""
import argparse
import logging
import os
import platform
import sys
import traceback
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from adapters.dataset_store import read_dataset, write_dataset_files
from adapters.result_store import (FeatureStore, atomic_directory, content_hash, save_model, write_csv, write_json,
                                   write_matrix_csv, write_effective_config)
from config.config import build_config, create_default_config
from core.analysis import anova_f_map, reproducibility, sndm_psd_spectrum
from core.bench import create_pipeline, run_scaling_benchmark
from core.cv import (ClassifierSpec, band_accuracy, fit_final_model, nested_cv_classify, nested_cv_regress,
                     permute_labels, rank_sweep)
from core.errors import ConfigError, DataError, InvalidArgumentError
from core.features import psd, sdm_features
from core.featurizer import FeatureBank, FeatureSpec, TrialDecomposer, featurize_trial
from core.models import CvConfig, Dataset, FeatureLayout
from core.signals import fig1_trial, generate_class_dataset, generate_regression_dataset
from utils.logging import log_with_context, new_run_id, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def _bands(text: str) -> List[List[float]]:
    """``"8-13,80-150"`` to [[8, 13], [80, 150]]."""
    bands = []
    for item in _str_list(text):
        low, _, high = item.partition('-')
        bands.append([float(low), float(high)])
    return bands


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=None, help='Path to a YAML run configuration')
    common.add_argument('--log-level', '-l', type=str, default=None,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'], help='Logging level')
    common.add_argument('--log-file', type=str, default=None, help='Also write JSON logs to this file')
    common.add_argument('--workers', type=int, default=None, help='Worker threads (default: SDM_WORKERS or 1)')
    common.add_argument('--seed', type=int, default=None, help='Random seed')
    common.add_argument('--out', '-o', type=str, help='Output directory')
    common.add_argument('--force', action='store_true', help='Overwrite a non-empty output directory')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--dataset', '-d', type=str, default=None, help='Dataset directory')
    data.add_argument('--dt', type=float, default=None, help='Sampling interval for CSV datasets')

    features = argparse.ArgumentParser(add_help=False)
    features.add_argument('--features', '--layout', dest='layout', type=str, default=None,
                          help='snDM, seDM, snDM+seDM, sdm, full-vec, gram, band-concatenated or band-power')
    features.add_argument('--bands', type=_bands, default=None, help='Bands as lo-hi pairs, e.g. 8-13,80-150')
    features.add_argument('--inner-layout', type=str, default=None, help='Per-band layout for band-concatenated')
    features.add_argument('--car', action='store_true', default=None, help='Common average reference first')
    features.add_argument('--nfft', type=int, default=None)
    features.add_argument('--stack-factor', type=int, default=None)

    parser = _ArgumentParser(description='DMD-based sDM feature extraction and decoding toolkit')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_ArgumentParser)

    synth = commands.add_parser('synth', parents=[common], help='Write a synthetic dataset')
    synth.add_argument('--preset', choices=['fig1'], default=None)
    synth.add_argument('--task', choices=['classification', 'regression'], default=None)
    synth.add_argument('--classes', type=int, default=None)
    synth.add_argument('--per-class', type=int, default=None)
    synth.add_argument('--trials', type=int, default=None)
    synth.add_argument('--targets', type=int, default=None)
    synth.add_argument('--channels', type=int, default=None)
    synth.add_argument('--samples', type=int, default=None)
    synth.add_argument('--sample-dt', dest='synth_dt', type=float, default=None)
    synth.add_argument('--noise', type=float, default=None)

    featurize = commands.add_parser('featurize', parents=[common, data, features], help='Per-trial features')
    featurize.add_argument('--ranks', type=_int_list, default=None)

    decode = commands.add_parser('decode', parents=[common, data, features], help='Nested cross-validated decoding')
    decode.add_argument('--classifier', choices=['linear-l2', 'kernel-l2', 'l1-logistic'], default=None)
    decode.add_argument('--task', choices=['auto', 'classification', 'regression'], default=None)
    decode.add_argument('--mode', choices=['nested', 'rank-sweep', 'band'], default=None)
    decode.add_argument('--permute-labels', action='store_true', default=None)
    decode.add_argument('--ranks', type=_int_list, default=None, help='Rank grid')
    decode.add_argument('--cost-grid', type=_float_list, default=None)
    decode.add_argument('--lambda-grid', type=_float_list, default=None)
    decode.add_argument('--outer-folds', type=int, default=None)
    decode.add_argument('--outer-repeats', type=int, default=None)
    decode.add_argument('--inner-folds', type=int, default=None)
    decode.add_argument('--inner-repeats', type=int, default=None)
    decode.add_argument('--split-rule', choices=['class-balanced', 'grouped', 'time-sequence'], default=None)
    decode.add_argument('--track-indices', action='store_true', default=None)
    decode.add_argument('--no-oversample', dest='oversample', action='store_false', default=None)

    analyze = commands.add_parser('analyze', parents=[common, data, features], help='Statistics maps')
    analyze.add_argument('kind', choices=['f-map', 'reproducibility', 'psd-corr'])
    analyze.add_argument('--rank', type=int, default=None)
    analyze.add_argument('--z-transform', action='store_true', default=None)

    bench = commands.add_parser('bench', parents=[common], help='Training and prediction scaling')
    bench.add_argument('--pipelines', type=_str_list, default=None)
    bench.add_argument('--n-values', type=_int_list, default=None)
    bench.add_argument('--repetitions', type=int, default=None)
    bench.add_argument('--channels', type=int, default=None)
    bench.add_argument('--samples', type=int, default=None)
    bench.add_argument('--rank', type=int, default=None)

    init_config = commands.add_parser('init-config', help='Write the default run configuration as YAML')
    init_config.add_argument('--out', '-o', type=str, required=True, help='Path of the YAML file to write')
    init_config.add_argument('--force', action='store_true', help='Overwrite an existing file')

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides: Dict[str, Any] = {
        'seed': get('seed'),
        'workers': get('workers'),
        'logging': {'level': get('log_level'), 'file': get('log_file')},
        'dataset': {'path': get('dataset'), 'dt': get('dt')},
        'features': {'layout': get('layout'), 'bands': get('bands'), 'inner_layout': get('inner_layout'),
                     'car': get('car'), 'nfft': get('nfft'), 'stack_factor': get('stack_factor')},
    }
    if args.command == 'synth':
        overrides['synth'] = {'preset': get('preset'), 'task': get('task'), 'classes': get('classes'),
                              'per_class': get('per_class'), 'trials': get('trials'), 'targets': get('targets'),
                              'channels': get('channels'), 'samples': get('samples'), 'dt': get('synth_dt'),
                              'noise': get('noise')}
    elif args.command == 'featurize':
        overrides['features']['ranks'] = get('ranks')
    elif args.command == 'decode':
        overrides['decode'] = {'classifier': get('classifier'), 'task': get('task'), 'mode': get('mode'),
                               'permute_labels': get('permute_labels')}
        overrides['cv'] = {'rank_grid': get('ranks'), 'cost_grid': get('cost_grid'),
                           'lambda_grid': get('lambda_grid'), 'outer_folds': get('outer_folds'),
                           'outer_repeats': get('outer_repeats'), 'inner_folds': get('inner_folds'),
                           'inner_repeats': get('inner_repeats'), 'split_rule': get('split_rule'),
                           'track_indices': get('track_indices'), 'oversample': get('oversample')}
    elif args.command == 'analyze':
        overrides['analyze'] = {'kind': get('kind'), 'rank': get('rank'), 'z_transform': get('z_transform')}
    elif args.command == 'bench':
        overrides['bench'] = {'pipelines': get('pipelines'), 'n_values': get('n_values'),
                              'repetitions': get('repetitions'), 'channels': get('channels'),
                              'samples': get('samples'), 'rank': get('rank')}
    return overrides


def _feature_spec(config: Dict[str, Any]) -> FeatureSpec:
    section = config['features']
    return FeatureSpec.from_name(section['layout'], bands=tuple(tuple(b) for b in section['bands']),
                                 inner_layout=section['inner_layout'], car=section['car'], nfft=section['nfft'],
                                 stack_factor=section['stack_factor'])


def _cv_config(config: Dict[str, Any]) -> CvConfig:
    return CvConfig.from_dict({**config['cv'], 'seed': config['seed'], 'workers': config['workers']})


def _load_dataset(config: Dict[str, Any]) -> Dataset:
    path = config['dataset']['path']
    if not path:
        raise ConfigError("No dataset given, use --dataset or dataset.path")
    return read_dataset(path, dt=config['dataset']['dt'])


def _require_out(out: Optional[str]) -> str:
    if not out:
        raise ConfigError("No output directory given, use --out")
    return out


def cmd_init_config(out: str, force: bool) -> int:
    if os.path.exists(out) and not force:
        raise ConfigError(f"{out} already exists, use --force to overwrite it")
    create_default_config(out)
    print(f"Wrote default configuration to {out}")
    return EXIT_OK


def _trial_ids(dataset: Dataset) -> List[str]:
    return [f"trial_{i:05d}" for i in range(len(dataset))]


def cmd_synth(config: Dict[str, Any], out: str, force: bool) -> int:
    section = config['synth']
    seed = config['seed']
    if section['preset'] == 'fig1':
        dataset = Dataset(trials=[fig1_trial()], name='fig1', metadata={'preset': 'fig1'})
    elif section['task'] == 'regression':
        dataset = generate_regression_dataset(section['trials'], section['channels'], section['samples'],
                                              section['dt'], section['targets'], seed, noise=section['noise'])
    else:
        dataset = generate_class_dataset(section['classes'], section['per_class'], section['channels'],
                                         section['samples'], section['dt'], seed, noise=section['noise'])
    with atomic_directory(out, force=force) as staging:
        write_dataset_files(dataset, staging)
        write_effective_config(config, staging)
    print(f"Wrote {len(dataset)} trials (P={dataset.n_channels}, L={dataset.trials[0].n_samples}) to {out}")
    return EXIT_OK


def cmd_featurize(config: Dict[str, Any], out: str, force: bool) -> int:
    dataset = _load_dataset(config)
    spec = _feature_spec(config)
    ranks: Sequence[Optional[int]] = config['features']['ranks'] if spec.uses_rank else [None]
    dataset_path = config['dataset']['path']
    sources = [os.path.join(root, name) for root, _, names in os.walk(dataset_path) for name in names]
    digest = content_hash(sources, extra={'features': spec.to_dict(), 'ranks': list(ranks)})

    store = FeatureStore(out)
    if not force and store.is_current(digest):
        logger.info(f"Feature store {out} is up to date")
        print(f"Features in {out} are up to date")
        return EXIT_OK

    trial_ids = _trial_ids(dataset)
    rows: Dict[Optional[int], List[Dict[str, Any]]] = {rank: [] for rank in ranks}
    records: List[Dict[str, Any]] = []
    errors: List[Dict[str, Any]] = []
    for trial_id, trial in zip(trial_ids, dataset.trials):
        for rank in ranks:
            try:
                vector = featurize_trial(trial, rank, spec, trial_id=trial_id)
            except InvalidArgumentError as e:
                logger.warning(f"Featurization failed for {trial_id} at rank {rank}: {e}")
                errors.append({'trial_id': trial_id, 'rank': rank, 'error': str(e)})
                continue
            row = {'trial_id': trial_id}
            row.update({f"f{k:05d}": v for k, v in enumerate(vector.values)})
            rows[rank].append(row)
            records.append({**vector.provenance(), 'length': len(vector)})

    tables = {rank: pd.DataFrame(table) for rank, table in rows.items() if table}
    # a stale feature store may be refreshed in place, anything else needs --force
    with atomic_directory(out, force=force or store.stored_hash() is not None) as staging:
        FeatureStore.write(staging, tables, records, errors, digest, spec.to_dict())
        write_effective_config(config, staging)
    print(f"Featurized {len(dataset)} trials at ranks {list(ranks)}: {len(records)} records, {len(errors)} errors")
    return EXIT_OK


def _report_rows(report, **extra: Any) -> List[Dict[str, Any]]:
    return [{**extra, **fold.to_row()} for fold in report.folds]


def cmd_decode(config: Dict[str, Any], out: str, force: bool, run_id: str) -> int:
    dataset = _load_dataset(config)
    section = config['decode']
    task = dataset.task if section['task'] == 'auto' else section['task']
    if task is None:
        raise ConfigError("Dataset has both labels and targets, set decode.task")
    if task == 'classification' and dataset.labels is None:
        raise ConfigError("Classification requested but the dataset has no labels")
    if task == 'regression' and dataset.targets is None:
        raise ConfigError("Regression requested but the dataset has no targets")
    if section['permute_labels']:
        if task != 'classification':
            raise ConfigError("--permute-labels applies to classification only")
        dataset = permute_labels(dataset, config['seed'])

    spec = _feature_spec(config)
    cv_config = _cv_config(config)
    classifier = ClassifierSpec(section['classifier'])

    with atomic_directory(out, force=force) as staging:
        if section['mode'] == 'rank-sweep':
            reports = rank_sweep(dataset, cv_config, spec, classifier, run_id=run_id)
            write_csv([{'rank': r, 'mean': rep.mean, 'std': rep.std} for r, rep in reports.items()],
                      os.path.join(staging, 'rank_sweep.csv'))
            write_csv([row for r, rep in reports.items() for row in _report_rows(rep, sweep_rank=r)],
                      os.path.join(staging, 'folds.csv'))
            summary = {'mode': 'rank-sweep', 'ranks': {str(r): rep.to_dict() for r, rep in reports.items()}}
            lines = [f"rank {r}: {rep.metric_kind} {rep.mean:.4f} +/- {rep.std:.4f}" for r, rep in reports.items()]
        elif section['mode'] == 'band':
            bands = spec.bands or None
            kwargs = {'bands': bands} if bands else {}
            reports = band_accuracy(dataset, cv_config, classifier, inner_layout=spec.inner_layout, car=spec.car,
                                    run_id=run_id, **kwargs)
            write_csv([{'band_low': b[0], 'band_high': b[1], 'mean': rep.mean, 'std': rep.std}
                       for b, rep in reports.items()], os.path.join(staging, 'band_accuracy.csv'))
            summary = {'mode': 'band', 'bands': {f"{b[0]:g}-{b[1]:g}": rep.to_dict() for b, rep in reports.items()}}
            lines = [f"band {b[0]:g}-{b[1]:g} Hz: {rep.metric_kind} {rep.mean:.4f}" for b, rep in reports.items()]
        else:
            bank = FeatureBank(dataset, spec, workers=cv_config.workers)
            if task == 'classification':
                report = nested_cv_classify(dataset, cv_config, spec, classifier, run_id=run_id, bank=bank)
            else:
                report = nested_cv_regress(dataset, cv_config, spec, run_id=run_id, bank=bank)
            write_csv(_report_rows(report), os.path.join(staging, 'folds.csv'))
            summary = {'mode': 'nested', 'task': task, **report.to_dict()}
            if section['save_model']:
                save_model(fit_final_model(bank, report, classifier, cv_config), os.path.join(staging, 'model.json'))
            lines = [f"{report.metric_kind}: {report.mean:.4f} +/- {report.std:.4f}"]
        timings = summary.pop('timings', None)
        if timings is not None:
            write_json(timings, os.path.join(staging, 'timings.json'))
        write_json(summary, os.path.join(staging, 'summary.json'))
        write_effective_config(config, staging)
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_analyze(config: Dict[str, Any], out: str, force: bool) -> int:
    dataset = _load_dataset(config)
    section = config['analyze']
    spec = _feature_spec(config)
    rank = section['rank']
    channels = list(dataset.channel_ids)

    with atomic_directory(out, force=force) as staging:
        if section['kind'] == 'f-map':
            if dataset.labels is None:
                raise ConfigError("The F-map needs labeled trials")
            decomposed = [TrialDecomposer(t, spec).decompose(rank) for t in dataset.trials]
            fmap = anova_f_map([sdm_features(r.modes, source_rank=r.rank_used) for r in decomposed], dataset.labels)
            write_matrix_csv(fmap.values, channels, os.path.join(staging, 'f_map.csv'))
            write_matrix_csv(fmap.p_values, channels, os.path.join(staging, 'p_values.csv'))
            summary = {'dof': list(fmap.dof), 'n_infinite': int(np.count_nonzero(fmap.infinite)),
                       'flags': list(fmap.flags)}
            line = f"F-map over {len(dataset)} trials, dof {fmap.dof}"
        elif section['kind'] == 'reproducibility':
            if dataset.labels is None:
                raise ConfigError("Reproducibility needs labeled trials")
            bank = FeatureBank(dataset, spec, workers=config['workers'])
            features = bank.features(min(rank, bank.available_rank) if spec.uses_rank else None)
            report = reproducibility(features, dataset.labels, z_transform=section['z_transform'])
            write_csv([{'class': k, 'mean': v, 'n_pairs': report.n_pairs[k]} for k, v in report.per_class.items()],
                      os.path.join(staging, 'reproducibility.csv'))
            summary = report.to_dict()
            line = f"reproducibility overall {report.overall:.4f}"
        else:
            sndm_spec = FeatureSpec(layout=FeatureLayout.SNDM, car=spec.car, stack_factor=spec.stack_factor)
            sndm = FeatureBank(dataset, sndm_spec, workers=config['workers']).features(rank)
            spectra = [psd(t, nfft=spec.nfft) for t in dataset.trials]
            spectrum = sndm_psd_spectrum(sndm, spectra)
            write_csv(pd.DataFrame({'frequency': spectrum.freqs, 'correlation': spectrum.values,
                                    'degenerate': spectrum.degenerate}),
                      os.path.join(staging, 'psd_correlation.csv'))
            summary = {'peak_frequency': spectrum.peak_frequency,
                       'n_degenerate': int(np.count_nonzero(spectrum.degenerate))}
            line = f"snDM-PSD correlation peaks at {spectrum.peak_frequency:g} Hz"
        write_json({'kind': section['kind'], **summary}, os.path.join(staging, 'summary.json'))
        write_effective_config(config, staging)
    print(line)
    return EXIT_OK


def cmd_bench(config: Dict[str, Any], out: str, force: bool) -> int:
    section = config['bench']
    timings = []
    exponents = []
    flags: List[str] = []
    with atomic_directory(out, force=force) as staging:
        for name in section['pipelines']:
            pipeline = create_pipeline(name, n_channels=section['channels'], n_samples=section['samples'],
                                       rank=section['rank'], cost=section['cost'], noise=section['noise'])
            series = run_scaling_benchmark(pipeline, section['n_values'], section['repetitions'], seed=config['seed'])
            timings.extend(series.rows())
            flags.extend(f"{name}: {flag}" for flag in series.flags)
            exponents.append({'pipeline': name,
                              'train_exponent': series.train_fit.exponent,
                              'train_intercept': series.train_fit.intercept,
                              'train_r_squared': series.train_fit.r_squared,
                              'predict_exponent': series.predict_fit.exponent,
                              'predict_intercept': series.predict_fit.intercept,
                              'predict_r_squared': series.predict_fit.r_squared})
        write_csv(timings, os.path.join(staging, 'timings.csv'))
        write_csv(exponents, os.path.join(staging, 'exponents.csv'))
        write_json({'machine': platform.platform(), 'processor': platform.processor(),
                    'python': platform.python_version(), 'numpy': np.__version__, 'flags': flags}, os.path.join(staging, 'environment.json'))
        write_effective_config(config, staging)

    print(f"{'pipeline':<12} {'train':>9} {'r^2':>7} {'predict':>9} {'r^2':>7}")
    for row in exponents:
        print(f"{row['pipeline']:<12} {row['train_exponent']:>9.3f} {row['train_r_squared']:>7.3f} "
              f"{row['predict_exponent']:>9.3f} {row['predict_r_squared']:>7.3f}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging(level=os.environ.get('SDM_LOG_LEVEL', 'INFO'))
    run_id = new_run_id()
    try:
        args = build_parser().parse_args(argv)
        if args.command == 'init-config':
            return cmd_init_config(args.out, args.force)
        overrides = _overrides(args)
        config = build_config(args.config, overrides)
        setup_logging(level=config['logging']['level'], log_file=config['logging']['file'],
                      json_format=config['logging']['json'])
        out = _require_out(args.out)
        log_with_context(logger, "INFO", f"Starting {args.command}", run_id=run_id, data={'out': out})

        if args.command == 'synth':
            code = cmd_synth(config, out, args.force)
        elif args.command == 'featurize':
            code = cmd_featurize(config, out, args.force)
        elif args.command == 'decode':
            code = cmd_decode(config, out, args.force, run_id)
        elif args.command == 'analyze':
            code = cmd_analyze(config, out, args.force)
        else:
            code = cmd_bench(config, out, args.force)
        log_with_context(logger, "INFO", f"Finished {args.command}", run_id=run_id, data={'exit_code': code})
        return code
    except (ConfigError, InvalidArgumentError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except DataError as e:
        logger.error(str(e))
        return EXIT_DATA
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        return EXIT_INTERNAL


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
