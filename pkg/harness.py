"""
Simulation harness
==================
Initial conditions, the time-stepping driver with its diagnostics series,
snapshot I/O, and the coarse/fine Cauchy-difference convergence study.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from elliptic import masses
from energy import DYNAMIC_BOTH, ModelParams, total_energy
from errors import CompatibilityError, ConfigError, DomainError, OutputError, SolverError
from grid import GridParams, inner_gamma, inner_omega
from stepper import (BC_MODES, SolverConfig, StepResult, advance_sides, energy_slack,
                     scheme_residual)

log = logging.getLogger(__name__)

INIT_KINDS = ('cosine', 'spinodal', 'square-droplet', 'two-droplets', 'fusion-band', 'custom-file')
SERIES_COLUMNS = ['t', 'energy', 'mass_bulk_drift', 'mass_bottom_drift', 'mass_top_drift',
                  'dissipation', 'newton_iters', 'residual', 'scheme_residual']
FLOAT_FORMAT = '%.17g'
ADMISSIBLE_INITIAL = 1.0 - 1e-6
SNAPSHOT_TIME_TOL = 1e-12

# Published Cauchy differences for grid pairs 16-32, 32-64, 64-128, 128-256
REFERENCE_TABLES = {
    'boundary': {
        'l2': [3.0401e-2, 7.6736e-3, 1.9241e-3, 4.8129e-4],
        'l2_rate': [None, 1.9861, 1.9957, 1.9992],
        'linf': [2.7768e-2, 6.9293e-3, 1.7708e-3, 4.4370e-4],
    },
    'domain': {
        'l2': [1.7003e-2, 4.0737e-3, 9.9197e-4, 2.4604e-4],
        'l2_rate': [None, 2.1024, 2.0569, 2.0113],
        'linf': [2.7768e-2, 7.7649e-3, 2.1448e-3, 6.9708e-4],
    },
}

# Experiment parameter sets, expressed as configuration keys
PRESETS = {
    'convergence': {'init': 'cosine', 'eps': 0.02, 'kappa': 0.02, 'theta0': 3.0, 'T': 1e-3,
                    'bc': 'dynamic'},
    'spinodal': {'init': 'spinodal', 'eps': 0.02, 'kappa': 1.0, 'theta0': 3.0, 'N': 128,
                 'dt': 1e-5, 'T': 0.1, 'seed': 1, 'bc': 'dynamic',
                 'snapshots': (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1)},
    'droplet': {'init': 'square-droplet', 'eps': 0.01, 'kappa': 0.01, 'theta0': 3.0,
                'bc': 'mixed'},
    'two-droplets': {'init': 'two-droplets', 'eps': 0.01, 'kappa': 0.01, 'theta0': 3.0,
                     'bc': 'mixed', 'T': 1e-2, 'snapshots': (1e-4, 1e-3, 3e-3, 1e-2)},
    'fusion-neumann': {'init': 'fusion-band', 'eps': 0.01, 'kappa': 0.01, 'theta0': 3.0,
                       'bc': 'neumann', 'T': 3e-2, 'snapshots': (1e-4, 2e-3, 1e-2, 3e-2)},
    'fusion-dynamic': {'init': 'fusion-band', 'eps': 0.01, 'kappa': 0.01, 'theta0': 3.0,
                       'bc': 'mixed', 'T': 0.6, 'snapshots': (2e-3, 3e-2, 2e-1, 6e-1)},
}


# ═══════════════════════════════════════════════════════════
# CONFIG TYPES
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class InitialCondition:
    kind: str = 'cosine'
    amplitude: float = 0.8
    mean: float = 0.2
    noise: float = 0.02
    seed: int = 1
    droplet_side: float = 0.3
    droplet_center: Tuple[float, float] = (0.5, 0.2)
    droplet_radius: float = 0.15
    band_height: float = 0.25
    band_radius: float = 0.1
    value_inside: float = 0.8
    value_outside: float = -0.8
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f'init must be one of {", ".join(INIT_KINDS)}, got {self.kind!r}')
        if self.kind == 'custom-file' and not self.path:
            raise ConfigError('init = custom-file needs init_file')


@dataclass(frozen=True)
class RunConfig:
    grid: GridParams
    model: ModelParams
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialCondition = field(default_factory=InitialCondition)
    bc_mode: str = 'dynamic'
    T_final: float = 1e-3
    snapshot_times: Tuple[float, ...] = ()
    out_dir: Path = Path('output')
    overwrite: bool = False
    log_every: int = 100

    def __post_init__(self):
        if self.bc_mode not in BC_MODES:
            raise ConfigError(f'bc must be one of {", ".join(BC_MODES)}, got {self.bc_mode!r}')
        if not self.T_final > 0:
            raise ConfigError(f'T must be > 0, got {self.T_final!r}')
        bad = [t for t in self.snapshot_times if not 0 <= t <= self.T_final]
        if bad:
            raise ConfigError(f'snapshot times must lie in [0, T], got {bad}')

    @property
    def sides(self) -> Tuple[str, ...]:
        return BC_MODES[self.bc_mode]


@dataclass(frozen=True)
class ConvergenceRow:
    n_coarse: int
    n_fine: int
    boundary_l2: float
    boundary_linf: float
    boundary_both_l2: float
    boundary_both_linf: float
    domain_l2: float
    domain_linf: float
    rates: Dict[str, Optional[float]] = field(default_factory=dict)


@dataclass
class RunOutcome:
    series: pd.DataFrame
    series_path: Path
    snapshot_paths: List[Path]
    final: Optional[StepResult]
    final_phi: np.ndarray


# ═══════════════════════════════════════════════════════════
# INITIAL CONDITIONS
# ═══════════════════════════════════════════════════════════
def _periodic_dx(x: np.ndarray, cx: float) -> np.ndarray:
    return (x - cx + 0.5) % 1.0 - 0.5


def _smoothed(sd: np.ndarray, ic: InitialCondition, h: float) -> np.ndarray:
    """One-mesh-width tanh profile; sd < 0 inside."""
    mid = 0.5 * (ic.value_inside + ic.value_outside)
    half = 0.5 * (ic.value_inside - ic.value_outside)
    return mid + half * np.tanh(-sd / h)


def _circle_sd(X, Y, cx, cy, r):
    return np.hypot(_periodic_dx(X, cx), Y - cy) - r


def make_initial(ic: InitialCondition, g: GridParams) -> np.ndarray:
    N, h = g.N, g.h
    X, Y = np.meshgrid(g.x, g.y, indexing='ij')
    if ic.kind == 'cosine':
        phi = ic.amplitude * np.cos(4 * np.pi * X) * np.cos(4 * np.pi * Y)
    elif ic.kind == 'spinodal':
        rng = np.random.Generator(np.random.PCG64(ic.seed))
        # stream order: row-major over interior rows j = 1..N-1, i fastest
        r = rng.uniform(-1.0, 1.0, size=(N - 1, N))
        phi = np.full((N, N + 1), ic.mean)
        phi[:, 1:N] = ic.mean + ic.noise * r.T
    elif ic.kind == 'square-droplet':
        cx, cy = ic.droplet_center
        half = 0.5 * ic.droplet_side
        qx = np.abs(_periodic_dx(X, cx)) - half
        qy = np.abs(Y - cy) - half
        sd = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0)) + np.minimum(np.maximum(qx, qy), 0)
        phi = _smoothed(sd, ic, h)
    elif ic.kind == 'two-droplets':
        r = ic.droplet_radius
        sd = np.minimum(_circle_sd(X, Y, 0.5 - r, 0.0, r), _circle_sd(X, Y, 0.5 + r, 0.0, r))
        phi = _smoothed(sd, ic, h)
    elif ic.kind == 'fusion-band':
        band = Y - ic.band_height
        hole = _circle_sd(X, Y, 0.5, 0.0, ic.band_radius)
        phi = _smoothed(np.maximum(band, -hole), ic, h)
    else:
        phi, _ = read_snapshot(Path(ic.path))
        if phi.shape != (N, N + 1):
            raise CompatibilityError(f'snapshot {ic.path} has N={phi.shape[0]}, configured N={N}')
    worst = float(np.max(np.abs(phi)))
    if not worst <= ADMISSIBLE_INITIAL:
        raise DomainError(f'initial data {ic.kind} is not admissible', {'max_abs': worst})
    return phi


# ═══════════════════════════════════════════════════════════
# SNAPSHOT I/O
# ═══════════════════════════════════════════════════════════
def _atomic_write(path: Path, writer, mode: str = 'w'):
    tmp = path.with_name(path.name + '.part')
    try:
        with open(tmp, mode) as fh:
            writer(fh)
        os.replace(tmp, path)
    except OSError as e:
        if tmp.exists():
            tmp.unlink()
        raise OutputError(f'cannot write {path}: {e}')


def write_bytes(path: Path, data: bytes):
    _atomic_write(path, lambda fh: fh.write(data), mode='wb')


def write_snapshot(out_dir: Path, index: int, t: float, phi: np.ndarray) -> List[Path]:
    N = phi.shape[0]
    stem = f'{index:04d}_t{t:.6g}'
    bulk = out_dir / f'phi_{stem}.txt'

    def _bulk(fh):
        fh.write(f'N {N} h {1.0 / N!r} t {t!r}\n')
        np.savetxt(fh, phi.T, fmt=FLOAT_FORMAT)

    _atomic_write(bulk, _bulk)
    paths = [bulk]
    for name, row in (('phiB', phi[:, 0]), ('phiT', phi[:, -1])):
        path = out_dir / f'{name}_{stem}.txt'
        _atomic_write(path, lambda fh, row=row: np.savetxt(fh, row[None, :], fmt=FLOAT_FORMAT))
        paths.append(path)
    return paths


def read_snapshot(path: Path) -> Tuple[np.ndarray, float]:
    try:
        with open(path) as fh:
            header = fh.readline().split()
            values = np.loadtxt(fh, ndmin=2)
    except OSError as e:
        raise ConfigError(f'cannot read snapshot {path}: {e}')
    if len(header) != 6 or header[0] != 'N' or header[2] != 'h' or header[4] != 't':
        raise ConfigError(f'{path}: expected header "N <N> h <h> t <t>"')
    N = int(header[1])
    if values.shape != (N + 1, N):
        raise ConfigError(f'{path}: expected {N + 1} rows of {N} values, got {values.shape}')
    return values.T.copy(), float(header[5])


# ═══════════════════════════════════════════════════════════
# DRIVER
# ═══════════════════════════════════════════════════════════
def step_count(T: float, s: float) -> int:
    n = int(round(T / s))
    if abs(n * s - T) > 1e-9 * T:
        n = int(math.ceil(T / s))
        log.warning(f'T = {T} is not a whole number of steps of {s}; running {n} steps to t = {n * s}')
    return max(n, 1)


def check_output_dir(out_dir: Path, overwrite: bool, names: Sequence[str] = ('series.csv',)):
    if not out_dir.is_dir():
        raise OutputError(f'output directory {out_dir} does not exist')
    if not os.access(out_dir, os.W_OK | os.X_OK):
        raise OutputError(f'output directory {out_dir} is not writable')
    existing = [n for n in names if (out_dir / n).exists()]
    if existing and not overwrite:
        raise OutputError(f'{", ".join(existing)} already exist in {out_dir}; pass --overwrite')


def write_csv(df: pd.DataFrame, path: Path):
    _atomic_write(path, lambda fh: df.to_csv(fh, index=False, float_format=FLOAT_FORMAT))


def run_simulation(cfg: RunConfig) -> RunOutcome:
    out_dir = Path(cfg.out_dir)
    check_output_dir(out_dir, cfg.overwrite)
    series_path = out_dir / 'series.csv'
    p, sides = cfg.model, cfg.sides
    phi = make_initial(cfg.initial, cfg.grid)
    m0 = masses(phi)
    n_steps = step_count(cfg.T_final, p.s)
    pending = sorted(cfg.snapshot_times)

    log.info(f'Running {n_steps} steps on N={cfg.grid.N} ({cfg.bc_mode} boundaries, init={cfg.initial.kind})')
    rows = []
    snapshots: List[Path] = []
    n_snap = 0

    def _take_snapshots(t, field_):
        nonlocal n_snap
        while pending and t >= pending[0] - SNAPSHOT_TIME_TOL:
            pending.pop(0)
            snapshots.extend(write_snapshot(out_dir, n_snap, t, field_))
            n_snap += 1

    _take_snapshots(0.0, phi)
    energy = total_energy(phi, p, sides)
    result = None
    try:
        for n in range(1, n_steps + 1):
            result = advance_sides(phi, p, cfg.solver, sides)
            t = n * p.s
            rep = result.report
            slack = energy_slack(energy, result)
            if slack > 1e-10 * max(1.0, abs(energy)):
                log.warning(f'step {n}: energy law slack {slack:.3e} above tolerance')
            rows.append({
                't': t,
                'energy': rep.energy,
                'mass_bulk_drift': rep.masses.bulk - m0.bulk,
                'mass_bottom_drift': rep.masses.bottom - m0.bottom,
                'mass_top_drift': rep.masses.top - m0.top,
                'dissipation': rep.dissipation,
                'newton_iters': rep.newton_iters,
                'residual': rep.final_residual,
                'scheme_residual': max(scheme_residual(result, phi, p).values()),
            })
            phi, energy = np.array(result.phi), rep.energy
            _take_snapshots(t, phi)
            if cfg.log_every and n % cfg.log_every == 0:
                log.info(f'step {n}/{n_steps}  t={t:.4e}  E={energy:.10e}  '
                         f'drift=({rows[-1]["mass_bulk_drift"]:.1e}, {rows[-1]["mass_bottom_drift"]:.1e}, '
                         f'{rows[-1]["mass_top_drift"]:.1e})  newton={rep.newton_iters}')
    except SolverError:
        write_csv(pd.DataFrame(rows, columns=SERIES_COLUMNS), series_path)
        log.error(f'Solver failed after {len(rows)} steps; partial series written to {series_path}')
        raise

    df = pd.DataFrame(rows, columns=SERIES_COLUMNS)
    write_csv(df, series_path)
    log.info(f'Wrote {series_path} ({len(df)} rows) and {len(snapshots)} snapshot files')
    return RunOutcome(df, series_path, snapshots, result, phi)


def summarize_series(df: pd.DataFrame, slack_tol: float = 1e-10) -> Dict[str, float]:
    """Energy-law violations, worst drifts and Newton statistics of a run."""
    if df.empty:
        return {'steps': 0}
    e = df['energy'].to_numpy()
    before = np.concatenate([[np.nan], e[:-1]])
    slack = e + df['dissipation'].to_numpy() - before
    limit = slack_tol * np.maximum(1.0, np.abs(before))
    return {
        'steps': int(len(df)),
        'final_time': float(df['t'].iloc[-1]),
        'final_energy': float(e[-1]),
        'energy_violations': int(np.nansum(slack > limit)),
        'worst_slack': float(np.nanmax(slack)) if len(df) > 1 else 0.0,
        'max_bulk_drift': float(df['mass_bulk_drift'].abs().max()),
        'max_bottom_drift': float(df['mass_bottom_drift'].abs().max()),
        'max_top_drift': float(df['mass_top_drift'].abs().max()),
        'mean_newton_iters': float(df['newton_iters'].mean()),
        'max_newton_iters': int(df['newton_iters'].max()),
        'max_residual': float(df['residual'].max()),
        'max_scheme_residual': float(df['scheme_residual'].max()) if 'scheme_residual' in df else float('nan'),
    }


# ═══════════════════════════════════════════════════════════
# GRID TRANSFER
# ═══════════════════════════════════════════════════════════
def restrict_fine_to_coarse(phi_f: np.ndarray) -> np.ndarray:
    """Nodal injection: coarse (i, j) takes fine (2i, 2j)."""
    Nf = phi_f.shape[0]
    if Nf % 2 or phi_f.shape != (Nf, Nf + 1):
        raise CompatibilityError(f'fine field must have shape (N, N+1) with N even, got {phi_f.shape}')
    return phi_f[::2, ::2].copy()


def prolong_coarse_to_fine(phi_c: np.ndarray) -> np.ndarray:
    """Bilinear interpolation, periodic in x."""
    Nc = phi_c.shape[0]
    fine = np.empty((2 * Nc, 2 * Nc + 1))
    right = np.roll(phi_c, -1, axis=0)
    fine[::2, ::2] = phi_c
    fine[1::2, ::2] = 0.5 * (phi_c + right)
    fine[::2, 1::2] = 0.5 * (phi_c[:, :-1] + phi_c[:, 1:])
    fine[1::2, 1::2] = 0.25 * (phi_c[:, :-1] + phi_c[:, 1:] + right[:, :-1] + right[:, 1:])
    return fine


# ═══════════════════════════════════════════════════════════
# CONVERGENCE STUDY
# ═══════════════════════════════════════════════════════════
def run_to_time(N: int, p: ModelParams, cfg: SolverConfig, T: float, dt_factor: float = 1e-3,
                ic: Optional[InitialCondition] = None) -> np.ndarray:
    """Final phase field at t = T with s = dt_factor * h^2, dynamic conditions on both rows."""
    g = GridParams(N)
    s = dt_factor * g.h * g.h
    n_exact = T / s
    n = int(round(n_exact))
    if n < 1 or abs(n * s - T) > 1e-9 * T:
        raise CompatibilityError(f'T = {T} is not a whole number of steps of s = {s} on N = {N}',
                                 {'steps': n_exact})
    pn = replace(p, s=s)
    phi = make_initial(ic or InitialCondition('cosine'), g)
    log.info(f'convergence leg N={N}: {n} steps of s={s:.3e}')
    for _ in range(n):
        phi = np.array(advance_sides(phi, pn, cfg, DYNAMIC_BOTH).phi)
    return phi


def cauchy_norms(phi_c: np.ndarray, phi_f: np.ndarray) -> Dict[str, float]:
    """Norms of phi_c - restrict(phi_f); equal sizes compare directly."""
    fine = phi_f if phi_f.shape == phi_c.shape else restrict_fine_to_coarse(phi_f)
    if fine.shape != phi_c.shape:
        raise CompatibilityError(f'grid pair mismatch: {phi_c.shape} vs {phi_f.shape}')
    d = phi_c - fine
    db, dt = d[:, 0], d[:, -1]
    return {
        'boundary_l2': float(np.sqrt(inner_gamma(db, db))),
        'boundary_linf': float(np.max(np.abs(db))),
        'boundary_both_l2': float(np.sqrt(inner_gamma(db, db) + inner_gamma(dt, dt))),
        'boundary_both_linf': float(max(np.max(np.abs(db)), np.max(np.abs(dt)))),
        'domain_l2': float(np.sqrt(inner_omega(d, d))),
        'domain_linf': float(np.max(np.abs(d))),
    }


NORM_KEYS = ('boundary_l2', 'boundary_linf', 'boundary_both_l2', 'boundary_both_linf',
             'domain_l2', 'domain_linf')


def _leg(args):
    N, p, cfg, T, dt_factor = args
    return N, run_to_time(N, p, cfg, T, dt_factor)


def convergence_study(grids: Sequence[int], p: ModelParams, cfg: SolverConfig,
                      T: float = 1e-3, dt_factor: float = 1e-3, workers: int = 1) -> List[ConvergenceRow]:
    grids = [int(n) for n in grids]
    if len(grids) < 2:
        raise ConfigError('convergence study needs at least two grids')
    for a, b in zip(grids, grids[1:]):
        if b != 2 * a:
            raise ConfigError(f'consecutive grids must differ by a factor 2, got {a} and {b}')
    jobs = [(N, p, cfg, T, dt_factor) for N in grids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            finals = dict(pool.map(_leg, jobs))
    else:
        finals = dict(map(_leg, jobs))

    rows: List[ConvergenceRow] = []
    prev = None
    for nc, nf in zip(grids, grids[1:]):
        norms = cauchy_norms(finals[nc], finals[nf])
        rates = {k: (math.log2(prev[k] / norms[k]) if prev and prev[k] > 0 and norms[k] > 0 else None)
                 for k in NORM_KEYS}
        rows.append(ConvergenceRow(nc, nf, rates=rates, **norms))
        prev = norms
    return rows


def convergence_table(rows: Sequence[ConvergenceRow]) -> pd.DataFrame:
    """Long table with one block per norm family: block, pair, l2, l2_rate, linf, linf_rate."""
    blocks = (('boundary', 'boundary_l2', 'boundary_linf'),
              ('boundary_both', 'boundary_both_l2', 'boundary_both_linf'),
              ('domain', 'domain_l2', 'domain_linf'))
    records = []
    for block, l2, linf in blocks:
        for row in rows:
            records.append({
                'block': block,
                'pair': f'{row.n_coarse}-{row.n_fine}',
                'l2': getattr(row, l2),
                'l2_rate': row.rates.get(l2),
                'linf': getattr(row, linf),
                'linf_rate': row.rates.get(linf),
            })
    return pd.DataFrame(records, columns=['block', 'pair', 'l2', 'l2_rate', 'linf', 'linf_rate'])
