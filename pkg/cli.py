"""
Command-line entry point.

    python cli.py run --config spinodal.cfg --out results/
    python cli.py converge --set grids=16,32,64 --out results/
    python cli.py check-ops

Configuration is a flat `key = value` file with `#` comments. Values are
layered: defaults, then --preset, then --config, then each --set.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from checks import run_checks
from energy import ModelParams
from errors import CHECK_FAILURE_EXIT, ConfigError, SolverBaseError
from grid import GridParams
from harness import (INIT_KINDS, PRESETS, InitialCondition, RunConfig, check_output_dir,
                     convergence_study, convergence_table, run_simulation, summarize_series,
                     write_bytes, write_csv)
from run_report import generate_convergence_report, generate_run_report
from stepper import BC_MODES, SolverConfig

log = logging.getLogger(__name__)

SUBCOMMANDS = ('run', 'converge', 'check-ops')
CHECK_SIZES = (4, 8)
CONVERGENCE_DT_FACTOR = 1e-3
LOG_FORMAT = '%(asctime)s | %(levelname)s | %(message)s'


# ═══════════════════════════════════════════════════════════
# KEY SCHEMA
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class Key:
    kind: str            # float | int | str | bool | floats | ints | pair | path
    default: object
    valid: Callable[[object], bool] = lambda v: True
    expect: str = ''


def _positive(v) -> bool:
    return v > 0


def _open_unit(v) -> bool:
    return -1 < v < 1


def _grid_ladder(v) -> bool:
    return (len(v) >= 2 and all(n >= 4 and n % 2 == 0 for n in v)
            and all(b == 2 * a for a, b in zip(v, v[1:])))


KEYS: Dict[str, Key] = {
    'init': Key('str', 'cosine', lambda v: v in INIT_KINDS, f'one of {", ".join(INIT_KINDS)}'),
    'N': Key('int', 128, lambda v: v >= 4 and v % 2 == 0, 'an even integer >= 4'),
    'dt': Key('float', 1e-5, _positive, 'strictly positive'),
    'T': Key('float', 1e-3, _positive, 'strictly positive'),
    'eps': Key('float', 0.02, _positive, 'strictly positive'),
    'kappa': Key('float', 0.02, _positive, 'strictly positive'),
    'theta0': Key('float', 3.0, _positive, 'strictly positive'),
    'bc': Key('str', 'dynamic', lambda v: v in BC_MODES, f'one of {", ".join(BC_MODES)}'),
    'seed': Key('int', 1, lambda v: 0 <= v < 2 ** 64, 'an integer in [0, 2^64)'),
    'snapshots': Key('floats', (), lambda v: all(t >= 0 for t in v), 'non-negative times'),
    'amplitude': Key('float', 0.8, lambda v: 0 <= v < 1, 'in [0, 1)'),
    'mean': Key('float', 0.2, _open_unit, 'in (-1, 1)'),
    'noise': Key('float', 0.02, lambda v: v >= 0, 'non-negative'),
    'droplet_side': Key('float', 0.3, lambda v: 0 < v < 1, 'in (0, 1)'),
    'droplet_center': Key('pair', (0.5, 0.2), lambda v: 0 <= v[1] <= 1, 'x,y with y in [0, 1]'),
    'droplet_radius': Key('float', 0.15, lambda v: 0 < v < 0.5, 'in (0, 0.5)'),
    'band_height': Key('float', 0.25, lambda v: 0 < v < 1, 'in (0, 1)'),
    'band_radius': Key('float', 0.1, lambda v: 0 < v < 0.5, 'in (0, 0.5)'),
    'value_inside': Key('float', 0.8, _open_unit, 'in (-1, 1)'),
    'value_outside': Key('float', -0.8, _open_unit, 'in (-1, 1)'),
    'init_file': Key('path', None),
    'newton_tol': Key('float', 1e-10, _positive, 'strictly positive'),
    'max_newton': Key('int', 50, lambda v: v >= 1, 'an integer >= 1'),
    'linear_tol': Key('float', 1e-12, _positive, 'strictly positive'),
    'fraction_to_boundary': Key('float', 0.95, lambda v: 0 < v < 1, 'in (0, 1)'),
    'armijo_c': Key('float', 1e-4, lambda v: 0 < v < 1, 'in (0, 1)'),
    'backtrack_factor': Key('float', 0.5, lambda v: 0 < v < 1, 'in (0, 1)'),
    'log_every': Key('int', 100, lambda v: v >= 0, 'a non-negative integer'),
    'pdf': Key('bool', False),
    'grids': Key('ints', (16, 32, 64, 128), _grid_ladder,
                 'at least two even sizes >= 4, each twice the previous'),
    'workers': Key('int', 1, lambda v: v >= 1, 'an integer >= 1'),
}

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')


def _split(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(',') if part.strip()]


def parse_value(key: str, raw: str):
    """Parse and validate one raw string value for `key`."""
    if key not in KEYS:
        raise ConfigError(f'unknown key {key!r}; valid keys: {", ".join(KEYS)}')
    spec = KEYS[key]
    raw = raw.strip()
    try:
        if spec.kind == 'float':
            value = float(raw)
        elif spec.kind == 'int':
            value = int(raw)
        elif spec.kind == 'bool':
            if raw.lower() not in _TRUE + _FALSE:
                raise ValueError(raw)
            value = raw.lower() in _TRUE
        elif spec.kind == 'floats':
            value = tuple(float(x) for x in _split(raw))
        elif spec.kind == 'ints':
            value = tuple(int(x) for x in _split(raw))
        elif spec.kind == 'pair':
            value = tuple(float(x) for x in _split(raw))
            if len(value) != 2:
                raise ValueError(raw)
        elif spec.kind == 'path':
            value = raw or None
        else:
            value = raw
    except ValueError:
        raise ConfigError(f'{key}: cannot parse {raw!r} as {spec.kind}')
    if spec.kind == 'float' and value != value:
        raise ConfigError(f'{key}: must be {spec.expect}, got {raw!r}')
    if not spec.valid(value):
        raise ConfigError(f'{key}: must be {spec.expect}, got {raw!r}')
    return value


def format_value(key: str, value) -> str:
    kind = KEYS[key].kind
    if kind == 'float':
        return repr(float(value))
    if kind == 'bool':
        return 'true' if value else 'false'
    if kind in ('floats', 'pair'):
        return ','.join(repr(float(x)) for x in value)
    if kind == 'ints':
        return ','.join(str(int(x)) for x in value)
    if kind == 'path':
        return value or ''
    return str(value)


# ═══════════════════════════════════════════════════════════
# CONFIG
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class CliConfig:
    subcommand: str = 'run'
    values: Mapping[str, object] = field(default_factory=lambda: {k: s.default for k, s in KEYS.items()})
    out_dir: Path = Path('.')
    overwrite: bool = False


def _assignments(lines: Sequence[str], source: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split('#', 1)[0].strip()
        if not text:
            continue
        if '=' not in text:
            raise ConfigError(f'{source}:{lineno}: expected "key = value", got {line.strip()!r}')
        key, raw = text.split('=', 1)
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f'{source}:{lineno}: unknown key {key!r}; valid keys: {", ".join(KEYS)}')
        out[key] = raw
    return out


def read_config_file(path) -> Dict[str, str]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ConfigError(f'cannot read config file {path}: {e}')
    return _assignments(lines, str(path))


def parse_config(path=None, overrides: Sequence[str] = (), preset: Optional[str] = None,
                 subcommand: str = 'run', out_dir='.', overwrite: bool = False) -> CliConfig:
    """Defaults, then preset, then file, then `key=value` overrides; fully validated."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f'subcommand must be one of {", ".join(SUBCOMMANDS)}, got {subcommand!r}')
    values = {k: s.default for k, s in KEYS.items()}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f'unknown preset {preset!r}; available: {", ".join(PRESETS)}')
        for key, value in PRESETS[preset].items():
            values[key] = parse_value(key, format_value(key, value))
    if path is not None:
        for key, raw in read_config_file(path).items():
            values[key] = parse_value(key, raw)
    for key, raw in _assignments(overrides, '--set').items():
        values[key] = parse_value(key, raw)

    cli = CliConfig(subcommand, values, Path(out_dir), bool(overwrite))
    build_run_config(cli)
    return cli


def format_config(cli: CliConfig) -> List[str]:
    return [f'{key} = {format_value(key, cli.values[key])}' for key in KEYS]


def build_model(values: Mapping[str, object]) -> ModelParams:
    return ModelParams(eps=values['eps'], kappa=values['kappa'], theta0=values['theta0'], s=values['dt'])


def build_solver(values: Mapping[str, object]) -> SolverConfig:
    return SolverConfig(newton_tol=values['newton_tol'], max_newton=values['max_newton'],
                        linear_tol=values['linear_tol'],
                        fraction_to_boundary=values['fraction_to_boundary'],
                        armijo_c=values['armijo_c'], backtrack_factor=values['backtrack_factor'])


def build_initial(values: Mapping[str, object]) -> InitialCondition:
    return InitialCondition(
        kind=values['init'], amplitude=values['amplitude'], mean=values['mean'],
        noise=values['noise'], seed=values['seed'], droplet_side=values['droplet_side'],
        droplet_center=tuple(values['droplet_center']), droplet_radius=values['droplet_radius'],
        band_height=values['band_height'], band_radius=values['band_radius'],
        value_inside=values['value_inside'], value_outside=values['value_outside'],
        path=values['init_file'],
    )


def build_run_config(cli: CliConfig) -> RunConfig:
    v = cli.values
    return RunConfig(grid=GridParams(v['N']), model=build_model(v), solver=build_solver(v),
                     initial=build_initial(v), bc_mode=v['bc'], T_final=v['T'],
                     snapshot_times=tuple(v['snapshots']), out_dir=cli.out_dir,
                     overwrite=cli.overwrite, log_every=v['log_every'])


# ═══════════════════════════════════════════════════════════
# SUBCOMMANDS
# ═══════════════════════════════════════════════════════════
def _write_pdf(path: Path, pdf_bytes: Optional[bytes], err: Optional[str]):
    if err or not pdf_bytes:
        log.warning(f'PDF report skipped: {err or "empty document"}')
        return
    try:
        write_bytes(path, pdf_bytes)
    except SolverBaseError as e:
        log.warning(f'PDF report skipped: {e}')
        return
    log.info(f'PDF: {path} ({len(pdf_bytes):,} bytes)')


def cmd_run(cli: CliConfig) -> int:
    cfg = build_run_config(cli)
    names = ['series.csv'] + (['report.pdf'] if cli.values['pdf'] else [])
    check_output_dir(cfg.out_dir, cfg.overwrite, names)
    outcome = run_simulation(cfg)
    summary = summarize_series(outcome.series)
    log.info(f'Energy-law violations: {summary.get("energy_violations", 0)} | '
             f'max drifts: {summary.get("max_bulk_drift", 0.0):.2e} (bulk), '
             f'{summary.get("max_bottom_drift", 0.0):.2e} (bottom), {summary.get("max_top_drift", 0.0):.2e} (top) | '
             f'Newton its: mean {summary.get("mean_newton_iters", 0.0):.2f}, max {summary.get("max_newton_iters", 0)} | '
             f'max scheme residual: {summary.get("max_scheme_residual", 0.0):.2e}')
    if cli.values['pdf']:
        pdf_bytes, err = generate_run_report(outcome.series, summary, format_config(cli))
        _write_pdf(cfg.out_dir / 'report.pdf', pdf_bytes, err)
    return 0


def cmd_converge(cli: CliConfig) -> int:
    v = cli.values
    names = ['convergence.csv'] + (['report.pdf'] if v['pdf'] else [])
    check_output_dir(cli.out_dir, cli.overwrite, names)
    rows = convergence_study(v['grids'], build_model(v), build_solver(v), T=v['T'],
                             dt_factor=CONVERGENCE_DT_FACTOR, workers=v['workers'])
    table = convergence_table(rows)
    for row in table.itertuples(index=False):
        rate = '-' if row.l2_rate is None or row.l2_rate != row.l2_rate else f'{row.l2_rate:.4f}'
        log.info(f'{row.block:14s} {row.pair:9s} l2={row.l2:.4e} rate={rate}  linf={row.linf:.4e}')
    path = cli.out_dir / 'convergence.csv'
    write_csv(table, path)
    log.info(f'Wrote {path}')
    if v['pdf']:
        pdf_bytes, err = generate_convergence_report(table)
        _write_pdf(cli.out_dir / 'report.pdf', pdf_bytes, err)
    return 0


def cmd_check_ops(cli: CliConfig) -> int:
    df = run_checks(CHECK_SIZES)
    print(df.to_string(index=False))
    failed = df[df['status'] != 'Pass']
    if len(failed):
        log.error(f'{len(failed)} property check(s) failed: {", ".join(sorted(set(failed["property"])))}')
        return CHECK_FAILURE_EXIT
    log.info(f'All {len(df)} property checks passed')
    return 0


COMMANDS = {'run': cmd_run, 'converge': cmd_converge, 'check-ops': cmd_check_ops}


# ═══════════════════════════════════════════════════════════
# MAIN
# ═══════════════════════════════════════════════════════════
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='flat key = value configuration file')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override one configuration key (repeatable)')
    common.add_argument('--preset', choices=sorted(PRESETS), help='seed the configuration from an experiment preset')
    common.add_argument('--out', default='.', help='existing output directory')
    common.add_argument('--overwrite', action='store_true', help='replace existing output files')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='log every Newton iteration')
    verbosity.add_argument('--quiet', action='store_true', help='warnings and errors only')

    parser = argparse.ArgumentParser(prog='chdbc', description='Flory-Huggins Cahn-Hilliard solver with dynamic boundary conditions')
    sub = parser.add_subparsers(dest='subcommand', required=True)
    sub.add_parser('run', parents=[common], help='time-step one configuration')
    sub.add_parser('converge', parents=[common], help='Cauchy-difference convergence study')
    sub.add_parser('check-ops', parents=[common], help='operator and derivative property suite')
    return parser


def _configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        cli = parse_config(args.config, args.set, args.preset, args.subcommand, args.out, args.overwrite)
        log.info('=' * 50)
        log.info(f'Phase-field solver: {cli.subcommand}')
        log.info('=' * 50)
        # the effective configuration is echoed even when logging is quiet
        echo = print if args.quiet else log.info
        for line in format_config(cli):
            echo(line)
        return COMMANDS[cli.subcommand](cli)
    except SolverBaseError as e:
        log.error(f'{type(e).__name__}: {e}')
        return e.exit_code
    except Exception:
        log.exception('Unexpected failure')
        return 1


if __name__ == '__main__':
    sys.exit(main())
