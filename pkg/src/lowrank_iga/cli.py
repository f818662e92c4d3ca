"""Command-line interface: run, sweep and verify subcommands."""

import argparse
import sys

from . import bench
from . import verify as vf
from .bench import RunConfig, load_config


def _int_list(text):
    return [int(t) for t in text.split(',') if t]


def _add_common(sub):
    sub.add_argument('--config', help='key=value config file')
    sub.add_argument('--domain', help='builtin domain name or domain file')
    sub.add_argument('--mode', choices=['elasticity', 'scalar'])
    sub.add_argument('--degree', type=int, help='spline degree p')
    sub.add_argument('--level', type=int, help='refinement level, n_el=2^L')
    sub.add_argument('--tol', type=float)
    sub.add_argument('--beta', type=float)
    sub.add_argument('--gamma', type=float)
    sub.add_argument('--delta', type=float)
    sub.add_argument('--alpha', type=float)
    sub.add_argument('--eps0', type=float)
    sub.add_argument('--eps-min', type=float, dest='eps_min')
    sub.add_argument('--eps-prec', type=float, dest='eps_prec')
    sub.add_argument('--jobs', type=int, default=1)
    sub.add_argument('--out', help='output directory')


_CONFIG_KEYS = ('domain', 'mode', 'degree', 'level', 'tol', 'beta', 'gamma',
                'delta', 'alpha', 'eps0', 'eps_min', 'eps_prec', 'out')


def _make_config(args):
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _cmd_run(args):
    config = _make_config(args)
    _, report = bench.run(config)
    print('domain=%s p=%d n_el=%d' % (config.domain, config.degree,
                                      config.n_el))
    print('iterations=%d converged=%s residual=%.3e' %
          (report.iterations, report.converged, report.residual_norm))
    print('memory_percent=%.4f (with cores %.4f)' %
          (report.mem_percent, report.mem_percent_with_cores))
    if report.message:
        print('message: %s' % report.message)
    return 0 if report.converged else 1


def _cmd_sweep(args):
    config = _make_config(args)
    degrees = _int_list(args.degrees) if args.degrees else [config.degree]
    levels = _int_list(args.levels) if args.levels else [config.level]
    results = bench.sweep(config, degrees, levels, jobs=args.jobs)
    for p, L, iters, max_rank, mem, _, status in results:
        print('p=%d L=%d iters=%s max_rank=%s mem%%=%s %s'
              % (p, L, iters, max_rank,
                 'nan' if mem != mem else '%.4f' % mem, status))
    return 0 if all(r[-1] == 'ok' for r in results) else 1


def _cmd_verify(args):
    config = _make_config(args)
    import os
    os.makedirs(config.out, exist_ok=True)
    reports = []
    if args.study:
        degrees = _int_list(args.degrees) if args.degrees else [2, 3]
        levels = _int_list(args.levels) if args.levels else [2, 3]
        rows = vf.convergence_study(config.domain, degrees=degrees,
                                    levels=levels, verbose=True)
        path = os.path.join(config.out, 'convergence.csv')
        vf.write_convergence_csv(rows, path)
        for p, L0, L1, o2, o1 in vf.convergence_orders(rows):
            print('p=%d L%d->L%d  order L2 %.2f  H1 %.2f'
                  % (p, L0, L1, o2, o1))
        print('wrote %s' % path)
        return 0
    r = vf.matrix_error_check(config.domain, config.degree, config.n_el,
                              mode=config.mode)
    print('rel_error=%.3e bound=%.3e zeta=%.3e lambda_min=%.3e'
          % (r.rel_error, r.bound, r.zeta, r.lambda_min))
    reports.append(r)
    if args.kernel:
        k = vf.kernel_check(config.domain, config.degree, config.n_el,
                            mode=config.mode)
        print('kernel dims: exact=%d approx=%d  rhs range residual=%.3e'
              % (k.kernel_dim_exact, k.kernel_dim_approx,
                 k.rhs_range_residual))
        reports.append(k)
    path = os.path.join(config.out, 'theory.csv')
    vf.write_theory_csv(reports, path)
    print('wrote %s' % path)
    ok = r.rel_error <= r.bound
    if args.kernel:
        ok = ok and reports[-1].kernel_dim_exact == reports[-1].kernel_dim_approx
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='lowrank-iga',
        description='Low-rank multipatch solver benchmarks and checks')
    subs = parser.add_subparsers(dest='command', required=True)

    p_run = subs.add_parser('run', help='single benchmark run')
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = subs.add_parser('sweep', help='(degree, level) sweep')
    _add_common(p_sweep)
    p_sweep.add_argument('--degrees', help='comma list, e.g. 3,4,5')
    p_sweep.add_argument('--levels', help='comma list, e.g. 4,5,6')
    p_sweep.set_defaults(func=_cmd_sweep)

    p_ver = subs.add_parser('verify', help='theory and convergence checks')
    _add_common(p_ver)
    p_ver.add_argument('--kernel', action='store_true',
                       help='also run the dense kernel comparison')
    p_ver.add_argument('--study', action='store_true',
                       help='run the manufactured-solution study instead')
    p_ver.add_argument('--degrees', help='study degrees, comma list')
    p_ver.add_argument('--levels', help='study levels, comma list')
    p_ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == '__main__':
    sys.exit(main())
