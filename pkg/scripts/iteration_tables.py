#!/usr/bin/env python3
"""Reproduce the benchmark iteration/rank/memory tables.

Runs the truncated solver on each builtin domain over a (degree, level)
grid and writes aggregated iterations.csv / ranks.csv / memory.csv per
domain. Levels above 5 take tens of minutes per run on curved domains.

Usage:
    python3 scripts/iteration_tables.py [--out results] [--degrees 3,4]
                                        [--levels 4,5] [--jobs 2]
                                        [--domains lshape,thick_ring]
"""

import argparse
import os

from lowrank_iga import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument('--out', default='results')
    ap.add_argument('--degrees', default='3,4')
    ap.add_argument('--levels', default='4,5')
    ap.add_argument('--jobs', type=int, default=1)
    ap.add_argument('--domains',
                    default='lshape,cross3d,thick_square,thick_ring')
    args = ap.parse_args()
    degrees = [int(t) for t in args.degrees.split(',') if t]
    levels = [int(t) for t in args.levels.split(',') if t]

    for domain in args.domains.split(','):
        out = os.path.join(args.out, domain)
        config = bench.RunConfig(domain=domain, out=out)
        print('== %s ==' % domain)
        for p, L, iters, max_rank, mem, _, status in \
                bench.sweep(config, degrees, levels, jobs=args.jobs):
            print('  p=%d n_el=%-3d iters=%-4s max_rank=%-3s mem%%=%.4f  %s'
                  % (p, 2 ** L, iters, max_rank, mem, status))
        print('  wrote CSVs to %s/' % out)


if __name__ == '__main__':
    main()
