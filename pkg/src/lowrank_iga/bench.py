"""Benchmark harness: configure a domain, run the truncated solver, and
emit iteration/rank/memory reports as plot-ready CSV files.

Configurations come from a line-oriented key=value file and/or keyword
overrides; all defaults reproduce the reference experiment settings
(tol=1e-6 relative, body load (0,0,-1), dyadic refinement n_el = 2^level).
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import assembly as asm
from . import geometry as geo
from . import precond as pc
from . import solver as sv

__all__ = ['RunConfig', 'load_config', 'run', 'sweep']


@dataclass
class RunConfig:
    """One solver run: domain, discretization, material and solver knobs."""
    domain: str = 'lshape'         # builtin name or domain-file path
    mode: str = 'elasticity'
    degree: int = 3
    level: int = 5                 # n_el = 2**level per direction
    E: float = None                # optional override for every patch
    nu: float = None
    fx: float = 0.0
    fy: float = 0.0
    fz: float = -1.0
    tol: float = 1e-6
    beta: float = 0.1
    gamma: float = 1e-8
    delta: float = 1e-3
    alpha: float = 0.5
    eps0: float = 0.1
    eps_min: float = None          # default tol*|f|*0.1 inside the solver
    eps_prec: float = pc.EPS_PREC
    max_iter: int = 500
    relative_stop: bool = True
    out: str = '.'

    def __post_init__(self):
        if self.mode not in ('elasticity', 'scalar'):
            raise ValueError("mode must be 'elasticity' or 'scalar'")
        if self.nu is not None and not self.nu < 0.5:
            raise ValueError("Poisson ratio must be < 0.5")
        if self.degree < 1 or self.level < 0:
            raise ValueError("need degree >= 1 and level >= 0")

    @property
    def n_el(self):
        return 2 ** self.level

    def tag(self):
        return '%s_p%d_L%d' % (os.path.basename(self.domain).replace('.', '_'),
                               self.degree, self.level)


_FLOAT_KEYS = {'E', 'nu', 'fx', 'fy', 'fz', 'tol', 'beta', 'gamma', 'delta',
               'alpha', 'eps0', 'eps_min', 'eps_prec'}
_INT_KEYS = {'degree', 'level', 'max_iter'}
_BOOL_KEYS = {'relative_stop'}


def load_config(path, **overrides):
    """RunConfig from a key=value file; keyword overrides win."""
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError("malformed config line: %r" % raw.rstrip())
            key, val = (t.strip() for t in line.split('=', 1))
            if key not in {f.name for f in fields(RunConfig)}:
                raise ValueError("unknown config key: %s" % key)
            if key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _BOOL_KEYS:
                values[key] = val.lower() in ('1', 'true', 'yes')
            else:
                values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def _load_domain(config):
    if os.path.exists(config.domain):
        topo = geo.load_domain(config.domain)
    else:
        topo = geo.builtin_domain(config.domain)
    if config.E is not None or config.nu is not None:
        for patch in topo.patches:
            if config.E is not None:
                patch.E = float(config.E)
            if config.nu is not None:
                patch.nu = float(config.nu)
    return topo


def _source(config):
    if config.mode == 'scalar':
        # scalar benchmarks use a unit source
        return lambda x, y, z: np.ones_like(x)
    return (config.fx, config.fy, config.fz)


def run(config, write_files=True):
    """assemble -> precondition -> solve; returns (u, SolveReport).

    Writes iterations.csv, ranks.csv, memory.csv, the per-iteration log and
    the per-block rank report into out/<tag>/.
    """
    topo = _load_domain(config)
    system = asm.assemble(topo, config.degree, config.n_el,
                          mode=config.mode, f=_source(config))
    prec = pc.build_preconditioner(system, tol=config.eps_prec)
    u, report = sv.tpcg(system, prec, tol=config.tol, beta=config.beta,
                        gamma=config.gamma, delta=config.delta,
                        alpha=config.alpha, eps0=config.eps0,
                        eps_min=config.eps_min, max_iter=config.max_iter,
                        relative_stop=config.relative_stop)
    if write_files:
        out = os.path.join(config.out, config.tag())
        os.makedirs(out, exist_ok=True)
        _write_rows(os.path.join(out, 'iterations.csv'),
                    ['p', 'n_el', 'iters'],
                    [[config.degree, config.n_el, report.iterations]])
        _write_rows(os.path.join(out, 'ranks.csv'),
                    ['p', 'n_el', 'max_rank'],
                    [[config.degree, config.n_el, _max_rank(report)]])
        _write_rows(os.path.join(out, 'memory.csv'),
                    ['p', 'n_el', 'mem_percent', 'mem_percent_with_cores'],
                    [[config.degree, config.n_el,
                      '%.6f' % report.mem_percent,
                      '%.6f' % report.mem_percent_with_cores]])
        _write_rows(os.path.join(out, 'iteration_log.csv'),
                    ['k', 'res_norm', 'max_rank', 'eps'],
                    [[k, '%.9e' % r, m, '%.3e' % e]
                     for k, r, m, e in report.history])
        asm.write_rank_report(system, os.path.join(out, 'block_ranks.csv'))
    return u, report


def _max_rank(report):
    return max((max(r) for r in report.ranks.values()), default=0)


def _write_rows(path, header, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _sweep_one(args):
    config, p, L = args
    cfg = replace(config, degree=p, level=L)
    try:
        _, report = run(cfg, write_files=False)
        status = 'ok' if report.converged else 'not_converged'
        return (p, L, report.iterations, _max_rank(report),
                report.mem_percent, report.mem_percent_with_cores, status)
    except Exception as exc:   # failure rows are marked, not fatal
        return (p, L, -1, -1, float('nan'), float('nan'),
                'failed: %s' % type(exc).__name__)


def sweep(config, degrees, levels, jobs=1):
    """Cartesian (degree, level) sweep; aggregated deterministic CSVs.

    Returns the list of result tuples (p, L, iters, max_rank, mem,
    mem_with_cores, status), sorted by (p, L).
    """
    tasks = [(config, p, L) for p in degrees for L in levels]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    os.makedirs(config.out, exist_ok=True)
    _write_rows(os.path.join(config.out, 'iterations.csv'),
                ['p', 'n_el', 'iters', 'status'],
                [[p, 2 ** L, it, st] for p, L, it, _, _, _, st in results])
    _write_rows(os.path.join(config.out, 'ranks.csv'),
                ['p', 'n_el', 'max_rank', 'status'],
                [[p, 2 ** L, mr, st] for p, L, _, mr, _, _, st in results])
    _write_rows(os.path.join(config.out, 'memory.csv'),
                ['p', 'n_el', 'mem_percent', 'mem_percent_with_cores',
                 'status'],
                [[p, 2 ** L, '%.6f' % m, '%.6f' % mc, st]
                 for p, L, _, _, m, mc, st in results])
    return results
