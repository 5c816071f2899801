import json
import pytest
import yaml
from harness.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, main
from harness.config import (
    ENV_SEED,
    build_config,
    build_experiment,
    parse_criteria,
    parse_score_arg,
    parse_splits,
    parse_synthetic_spec,
    parse_timing,
)
from core.difficulty import CriterionKind
from core.errors import ConfigurationError


@pytest.fixture
def bench_dir(tmp_path):
    out = tmp_path / 'bench'
    assert main(['generate', '--images', '30', '--seed', '2', '--out', str(out)]) == EXIT_OK
    return out


def _sweep_args(bench_dir, out):
    return [
        'sweep',
        '--dataset', str(bench_dir / 'dataset.jsonl'),
        '--fast', str(bench_dir / 'fast.jsonl'),
        '--slow', str(bench_dir / 'slow.jsonl'),
        '--threshold', '0',
        '--scores', f"class_agnostic={bench_dir / 'scores_class_agnostic.csv'}",
        '--criterion', 'all',
        '--runs', '2',
        '--out', str(out),
    ]


def _config(tmp_path, **values):
    path = tmp_path / 'experiment.yaml'
    path.write_text(yaml.safe_dump(values), encoding='utf-8')
    return str(path)


class TestPipeline:
    def test_generate_writes_files(self, bench_dir):
        names = sorted(p.name for p in bench_dir.iterdir())
        assert names == [
            'dataset.jsonl', 'fast.jsonl', 'scores_class_agnostic.csv',
            'scores_person_aware.csv', 'slow.jsonl',
        ]
        assert len((bench_dir / 'dataset.jsonl').read_text().splitlines()) == 30

    def test_eval(self, bench_dir, capsys):
        code = main([
            'eval', '--dataset', str(bench_dir / 'dataset.jsonl'),
            '--detections', str(bench_dir / 'slow.jsonl'), '--threshold', '0',
        ])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert 0.0 < report['ap'] <= 1.0

    def test_sweep_then_report(self, bench_dir, tmp_path, capsys):
        out = tmp_path / 'results'
        assert main(_sweep_args(bench_dir, out)) == EXIT_OK
        printed = capsys.readouterr().out
        assert '## AP' in printed
        assert sorted(p.name for p in out.iterdir()) == [
            'report.csv', 'report.dat', 'report.md', 'result.json',
        ]
        result = json.loads((out / 'result.json').read_text())
        assert result['criteria'] == [
            'difficulty:class_agnostic', 'num_faces', 'avg_face_size', 'faces_over_avg_size',
        ]

        assert main(['report', '--input', str(out / 'result.json'), '--emit', 'csv']) == EXIT_OK
        assert capsys.readouterr().out == (out / 'report.csv').read_text()

    def test_cost(self, capsys):
        assert main(['cost', '--timing', 'fddb', '--splits', '1,0.5,0']) == EXIT_OK
        assert '| Face detection | 0.2700 | 0.7200 | 1.1700 |' in capsys.readouterr().out

    def test_baseline(self, tmp_path, capsys):
        cfg = _config(tmp_path, synthetic={'image_count': 20}, runs=2, out=str(tmp_path / 'b'))
        assert main(['baseline', '--config', cfg, '--splits', '0.5']) == EXIT_OK
        lines = (tmp_path / 'b' / 'baseline.csv').read_text().splitlines()
        assert lines[0].startswith('split,ap_mean,ap_std')
        assert lines[1].startswith('50%-50%,')


class TestConfigFile:
    def test_flags_override_file(self, tmp_path):
        out = tmp_path / 'r'
        cfg = _config(
            tmp_path,
            synthetic={'image_count': 20},
            criteria=['num_faces'],
            splits=[0.5],
            runs=1,
            emit=['json'],
            out=str(out),
        )
        assert main(['sweep', '--config', cfg, '--splits', '1.0']) == EXIT_OK
        result = json.loads((out / 'result.json').read_text())
        assert result['splits'] == [1.0]
        assert result['criteria'] == ['num_faces']
        assert (out / 'report.json').exists()

    def test_env_seed(self, monkeypatch):
        monkeypatch.setenv(ENV_SEED, '7')
        assert build_config({}, {}).seed == 7
        assert build_config({'seed': 3}, {}).seed == 3
        assert build_config({}, {'seed': 4}).seed == 4


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        args = ['sweep', '--dataset', str(tmp_path / 'nope.jsonl'), '--fast', 'a', '--slow', 'b']
        assert main(args) == EXIT_INPUT

    def test_malformed_dataset(self, bench_dir, tmp_path):
        bad = tmp_path / 'bad.jsonl'
        bad.write_text('{"id": "x"\n')
        args = _sweep_args(bench_dir, tmp_path / 'r')
        args[args.index('--dataset') + 1] = str(bad)
        assert main(args) == EXIT_INPUT

    def test_missing_score(self, bench_dir, tmp_path):
        scores = tmp_path / 'partial.csv'
        lines = (bench_dir / 'scores_class_agnostic.csv').read_text().splitlines()
        scores.write_text('\n'.join(lines[:-1]) + '\n')
        args = _sweep_args(bench_dir, tmp_path / 'r')
        args[args.index('--scores') + 1] = f'class_agnostic={scores}'
        assert main(args) == EXIT_INPUT

    def test_unknown_criterion(self, bench_dir, tmp_path):
        args = _sweep_args(bench_dir, tmp_path / 'r')
        args[args.index('--criterion') + 1] = 'bogus'
        assert main(args) == EXIT_CONFIG

    def test_detectors_without_dataset(self):
        assert main(['sweep', '--fast', 'synth:q=0.9', '--slow', 'synth:q=0.95']) == EXIT_CONFIG

    def test_bad_timing(self):
        assert main(['cost', '--timing', 'fast=abc']) == EXIT_CONFIG

    def test_malformed_splits(self):
        assert main(['sweep', '--splits', 'a,b']) == EXIT_CONFIG
        assert main(['baseline', '--splits', '1.5']) == EXIT_CONFIG
        assert main(['cost', '--splits', '0.5,x']) == EXIT_CONFIG

    def test_bad_emit_is_a_usage_error(self):
        with pytest.raises(SystemExit):
            main(['report', '--input', 'x.json', '--emit', 'pdf'])


class TestParsers:
    def test_timing(self):
        assert parse_timing('fddb').t_slow == 1.17
        custom = parse_timing('fast=0.1, slow=1.0, pred=0.02')
        assert (custom.t_fast, custom.t_slow, custom.t_pred) == (0.1, 1.0, 0.02)
        with pytest.raises(ConfigurationError):
            parse_timing('fast=0.1,warp=2')

    def test_synthetic_spec(self):
        cfg = parse_synthetic_spec('synth:q=0.7,s0=0.1,gamma=20,fp=0.4,eta=0.02,seed=9')
        assert (cfg.quality, cfg.size_midpoint, cfg.size_slope) == (0.7, 0.1, 20.0)
        assert cfg.seed == 9
        with pytest.raises(ConfigurationError):
            parse_synthetic_spec('synth:q=2')
        with pytest.raises(ConfigurationError):
            parse_synthetic_spec('synth:zeta=1')

    def test_score_arg(self):
        assert parse_score_arg('ext=/data/s.csv') == ('ext', '/data/s.csv')
        assert parse_score_arg('/data/class_agnostic.csv') == ('class_agnostic', '/data/class_agnostic.csv')

    def test_criteria_expansion(self):
        kinds = parse_criteria(['all', 'num_faces'], ['a', 'b'])
        assert kinds == [
            CriterionKind.external('a'), CriterionKind.external('b'), *CriterionKind.detector_based(),
        ]
        assert parse_criteria(['n,avg'], []) == [CriterionKind.num_faces(), CriterionKind.avg_face_size()]

    def test_splits(self):
        assert parse_splits('1.0, 0.5,0') == [1.0, 0.5, 0.0]
        assert build_config({'splits': [0.25]}, {'splits': '0.75,0.5'}).splits == [0.75, 0.5]
        with pytest.raises(ConfigurationError):
            parse_splits('0.5,,abc')
        with pytest.raises(ConfigurationError):
            build_config({'splits': [0.5, 1.5]}, {})


class TestThresholdDefaults:
    def _experiment(self, bench_dir, **overrides):
        values = {'dataset': str(bench_dir / 'dataset.jsonl'), 'criteria': ['num_faces']}
        values.update(overrides)
        return build_experiment(build_config({}, values))

    def test_files_default_to_half(self, bench_dir):
        exp = self._experiment(
            bench_dir, fast=str(bench_dir / 'fast.jsonl'), slow=str(bench_dir / 'slow.jsonl')
        )
        assert exp.fast.config.confidence_threshold == 0.5
        assert exp.slow.config.confidence_threshold == 0.5

    def test_synthetic_specs_keep_false_positives(self, bench_dir):
        exp = self._experiment(bench_dir, fast='synth:q=0.8,fp=2', slow='synth:q=0.95,fp=2')
        assert exp.fast.config.confidence_threshold == 0.0
        confidences = [d.confidence for image in exp.dataset for d in exp.fast.detect(image).detections]
        assert min(confidences) <= 0.4

    def test_threshold_above_fp_ceiling_warns(self, bench_dir, caplog):
        with caplog.at_level('WARNING', logger='harness.config'):
            exp = self._experiment(
                bench_dir, fast='synth:q=0.8', slow='synth:q=0.95', confidence_threshold=0.5
            )
        assert exp.fast.config.confidence_threshold == 0.5
        assert 'false-positive confidence ceiling' in caplog.text
