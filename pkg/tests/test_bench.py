import os

import numpy as np
import pytest

from lowrank_iga import bench
from lowrank_iga import cli
from lowrank_iga.bench import RunConfig, load_config


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert c.n_el == 32
        assert c.tol == 1e-6 and c.beta == 0.1 and c.gamma == 1e-8
        assert c.delta == 1e-3 and c.alpha == 0.5 and c.eps0 == 0.1

    def test_rejects_bad_poisson_ratio(self):
        with pytest.raises(ValueError):
            RunConfig(nu=0.5)

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            RunConfig(mode='plastic')

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\ndomain = thick_ring\ndegree = 4\n"
                        "tol = 1e-8\nrelative_stop = false\n")
        c = load_config(str(path))
        assert (c.domain, c.degree, c.tol, c.relative_stop) == \
            ('thick_ring', 4, 1e-8, False)
        c = load_config(str(path), degree=2)
        assert c.degree == 2

    def test_config_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nonsense = 1\n")
        with pytest.raises(ValueError):
            load_config(str(path))


class TestRun:
    def test_run_writes_artifacts(self, tmp_path):
        c = RunConfig(domain='lshape', degree=2, level=1, out=str(tmp_path))
        u, report = bench.run(c)
        assert report.converged
        out = os.path.join(str(tmp_path), c.tag())
        for name in ('iterations.csv', 'ranks.csv', 'memory.csv',
                     'iteration_log.csv', 'block_ranks.csv'):
            assert os.path.exists(os.path.join(out, name))
        lines = open(os.path.join(out, 'iterations.csv')).read().splitlines()
        assert lines[0] == 'p,n_el,iters'
        p, n_el, iters = lines[1].split(',')
        assert (int(p), int(n_el), int(iters)) == (2, 2, report.iterations)
        log = open(os.path.join(out, 'iteration_log.csv')).read().splitlines()
        assert log[0] == 'k,res_norm,max_rank,eps'
        assert len(log) == 1 + len(report.history)

    def test_domain_file_input(self, tmp_path):
        from lowrank_iga import geometry as geo
        path = tmp_path / "dom.txt"
        geo.save_domain(geo.builtin_domain('lshape'), str(path))
        c = RunConfig(domain=str(path), degree=2, level=1, out=str(tmp_path))
        _, report = bench.run(c)
        assert report.converged

    def test_material_override(self, tmp_path):
        c = RunConfig(domain='lshape', degree=2, level=1, E=2.0, nu=0.2,
                      out=str(tmp_path))
        topo = bench._load_domain(c)
        assert all(p.E == 2.0 and p.nu == 0.2 for p in topo.patches)


class TestSweep:
    def test_grid_and_determinism(self, tmp_path):
        c = RunConfig(domain='lshape', out=str(tmp_path))
        res = bench.sweep(c, degrees=[1, 2], levels=[1], jobs=1)
        assert len(res) == 2
        assert all(r[-1] == 'ok' for r in res)
        data1 = open(os.path.join(str(tmp_path), 'iterations.csv'),
                     'rb').read()
        bench.sweep(c, degrees=[1, 2], levels=[1], jobs=2)
        data2 = open(os.path.join(str(tmp_path), 'iterations.csv'),
                     'rb').read()
        assert data1 == data2

    def test_empty_ranges(self, tmp_path):
        c = RunConfig(domain='lshape', out=str(tmp_path))
        res = bench.sweep(c, degrees=[], levels=[1])
        assert res == []
        lines = open(os.path.join(str(tmp_path),
                                  'iterations.csv')).read().splitlines()
        assert lines == ['p,n_el,iters,status']

    def test_failure_rows_marked(self, tmp_path):
        c = RunConfig(domain='lshape', out=str(tmp_path), max_iter=1)
        res = bench.sweep(c, degrees=[2], levels=[1])
        assert res[0][-1] == 'not_converged'


class TestCli:
    def test_run_subcommand(self, tmp_path, capsys):
        rc = cli.main(['run', '--domain', 'lshape', '--degree', '2',
                       '--level', '1', '--out', str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert 'iterations=' in out and 'converged=True' in out

    def test_sweep_subcommand(self, tmp_path, capsys):
        rc = cli.main(['sweep', '--domain', 'lshape', '--degrees', '2',
                       '--levels', '1', '--out', str(tmp_path)])
        assert rc == 0
        assert os.path.exists(os.path.join(str(tmp_path), 'iterations.csv'))

    def test_verify_subcommand(self, tmp_path, capsys):
        rc = cli.main(['verify', '--domain', 'lshape', '--degree', '2',
                       '--level', '1', '--kernel', '--out', str(tmp_path)])
        assert rc == 0
        assert os.path.exists(os.path.join(str(tmp_path), 'theory.csv'))
        out = capsys.readouterr().out
        assert 'kernel dims' in out
