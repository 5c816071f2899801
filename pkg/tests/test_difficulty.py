from math import ceil, inf
import pytest
from hypothesis import assume, given, strategies as st
from core.difficulty import (
    CriterionFamily,
    CriterionFeatures,
    CriterionKind,
    CriterionScore,
    ScoreTable,
    calibrate_threshold,
    criterion_features,
    criterion_value,
    easy_count,
    load_score_table,
    rank_split,
    resolve_tables,
    threshold_split,
)
from core.errors import ConfigurationError, InputFormatError, MissingImageError
from tests.helpers import image, output


def scores(*values):
    return [CriterionScore(f'i{k:03d}', v) for k, v in enumerate(values)]


score_lists = st.lists(
    st.one_of(st.integers(-5, 5).map(float), st.just(inf)), min_size=1, max_size=30
).map(lambda vs: scores(*vs))
fractions = st.sampled_from([0.0, 0.1, 0.25, 0.3, 0.5, 0.75, 0.9, 1.0])


class TestScoreTable:
    def test_load(self):
        table = load_score_table('id,score\na,0.3\nb, -1.5\n', 'ext')
        assert table.name == 'ext'
        assert table.lookup('a') == 0.3
        assert table.lookup('b') == -1.5
        assert len(table) == 2

    def test_numeric_looking_ids_stay_strings(self):
        table = load_score_table('id,score\n007,1\n')
        assert '007' in table

    def test_empty(self):
        assert len(load_score_table('')) == 0

    def test_missing_id(self):
        table = load_score_table('id,score\na,1\n', 'ext')
        with pytest.raises(MissingImageError, match='score table ext'):
            table.lookup('zz')

    def test_duplicate_id_names_line(self):
        with pytest.raises(InputFormatError, match='line 3.*duplicate image id a'):
            load_score_table('id,score\na,1\na,2\n')

    def test_non_numeric_score(self):
        with pytest.raises(InputFormatError, match='line 2.*not a finite number'):
            load_score_table('id,score\na,hard\nb,1\n')

    def test_non_finite_score(self):
        with pytest.raises(InputFormatError, match='not a finite number'):
            load_score_table('id,score\na,1\nb,inf\n')

    def test_missing_column(self):
        with pytest.raises(InputFormatError, match='lacks columns'):
            load_score_table('id,value\na,1\n')

    def test_rejects_non_finite_in_memory(self):
        with pytest.raises(ValueError):
            ScoreTable('t', {'a': inf})


class TestCriterionValues:
    def test_features(self):
        img = image('a', width=100, height=100)
        out = output('a', [((0, 0, 10, 10), 0.9), ((50, 50, 70, 70), 0.8)])
        features = criterion_features(out, img)
        assert features.n == 2
        assert features.avg == pytest.approx(0.15)

    def test_features_of_empty_output(self):
        assert criterion_features(output('a', []), image('a')) == CriterionFeatures(0)

    def test_features_reject_foreign_output(self):
        with pytest.raises(ValueError):
            criterion_features(output('b', []), image('a'))

    def test_no_detections_is_sentinel(self):
        for kind in CriterionKind.detector_based():
            value = criterion_value(kind, 'a', CriterionFeatures(0))
            assert value.value == inf
            assert value.is_sentinel

    def test_detector_based_values(self):
        features = CriterionFeatures(4, 0.2)
        assert criterion_value(CriterionKind.num_faces(), 'a', features).value == 4.0
        assert criterion_value(CriterionKind.avg_face_size(), 'a', features).value == pytest.approx(-0.2)
        assert criterion_value(CriterionKind.faces_over_avg_size(), 'a', CriterionFeatures(2, 0.15)).value == pytest.approx(13.333333)

    def test_external_passthrough(self):
        table = ScoreTable('ext', {'a': -2.5})
        assert criterion_value(CriterionKind.external('ext'), 'a', table=table).value == -2.5
        with pytest.raises(MissingImageError):
            criterion_value(CriterionKind.external('ext'), 'b', table=table)

    def test_missing_inputs(self):
        with pytest.raises(ConfigurationError):
            criterion_value(CriterionKind.external('ext'), 'a')
        with pytest.raises(ConfigurationError):
            criterion_value(CriterionKind.num_faces(), 'a')

    @given(st.integers(1, 20), st.floats(0.01, 0.5), st.integers(1, 20), st.floats(0.01, 0.5))
    def test_more_faces_smaller_faces_is_harder(self, n1, avg1, n2, avg2):
        assume(n1 <= n2 and avg1 >= avg2)
        v1 = criterion_value(CriterionKind.faces_over_avg_size(), 'a', CriterionFeatures(n1, avg1)).value
        v2 = criterion_value(CriterionKind.faces_over_avg_size(), 'b', CriterionFeatures(n2, avg2)).value
        assert v1 <= v2
        s1 = criterion_value(CriterionKind.avg_face_size(), 'a', CriterionFeatures(n1, avg1)).value
        s2 = criterion_value(CriterionKind.avg_face_size(), 'b', CriterionFeatures(n2, avg2)).value
        assert s1 <= s2

    def test_features_validation(self):
        with pytest.raises(ValueError):
            CriterionFeatures(2)
        with pytest.raises(ValueError):
            CriterionFeatures(0, 0.1)
        with pytest.raises(ValueError):
            CriterionFeatures(1, 1.5)


class TestCriterionKind:
    @pytest.mark.parametrize(
        'text, family',
        [
            ('n', CriterionFamily.NUM_FACES),
            ('num_faces', CriterionFamily.NUM_FACES),
            ('avg', CriterionFamily.AVG_FACE_SIZE),
            ('n/avg', CriterionFamily.FACES_OVER_AVG_SIZE),
            (' faces_over_avg_size ', CriterionFamily.FACES_OVER_AVG_SIZE),
        ],
    )
    def test_aliases(self, text, family):
        assert CriterionKind.parse(text).family is family

    def test_external(self):
        kind = CriterionKind.parse('difficulty:class_agnostic')
        assert kind == CriterionKind.external('class_agnostic')
        assert str(kind) == 'difficulty:class_agnostic'
        assert not kind.is_detector_based
        assert CriterionKind.parse('external_difficulty:x').table_name == 'x'

    @pytest.mark.parametrize('text', ['faces', 'difficulty:', 'size:x', ''])
    def test_unknown(self, text):
        with pytest.raises(ConfigurationError):
            CriterionKind.parse(text)

    def test_table_only_for_external(self):
        with pytest.raises(ConfigurationError):
            CriterionKind(CriterionFamily.NUM_FACES, 'x')
        with pytest.raises(ConfigurationError):
            CriterionKind(CriterionFamily.EXTERNAL_DIFFICULTY)

    def test_resolve_tables(self):
        tables = {'a': ScoreTable('a', {})}
        kinds = [CriterionKind.external('a'), CriterionKind.num_faces()]
        assert resolve_tables(kinds, tables) == tables
        with pytest.raises(ConfigurationError, match="'b'"):
            resolve_tables([CriterionKind.external('b')], tables)


class TestCalibration:
    def test_examples(self):
        values = scores(3, 1, 2, 4)
        assert calibrate_threshold(values, 0.5) == 2
        assert calibrate_threshold(values, 0.25) == 1
        assert calibrate_threshold(values, 0.75) == 3
        assert calibrate_threshold(values, 0.0) == -inf
        assert calibrate_threshold(values, 1.0) == inf

    def test_small_fraction_still_admits_one(self):
        assert calibrate_threshold(scores(5, 7, 9), 0.01) == 5

    def test_empty(self):
        assert calibrate_threshold([], 0.0) == -inf
        assert calibrate_threshold([], 1.0) == inf
        with pytest.raises(ValueError):
            calibrate_threshold([], 0.5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            calibrate_threshold(scores(1), 1.5)

    @given(score_lists, fractions)
    def test_smallest_threshold_reaching_quota(self, values, p):
        assume(0.0 < p < 1.0)
        t = calibrate_threshold(values, p)
        need = max(1, ceil(p * len(values) - 1e-9))
        if sorted(v.value for v in values)[need - 1] == inf:
            assert t == max((v.value for v in values if not v.is_sentinel), default=-inf)
            return
        admitted = lambda x: sum(1 for v in values if v.value <= x)
        assert admitted(t) >= need
        assert all(admitted(v.value) < need for v in values if v.value < t)

    def test_sentinel_is_hard_below_one(self):
        values = scores(1, inf, 2, inf)
        for p in (0.25, 0.5):
            easy, hard = threshold_split(values, calibrate_threshold(values, p))
            assert {'i001', 'i003'} <= set(hard)

    def test_sentinels_outnumbering_hard_slots(self):
        values = scores(1, inf, inf, inf)
        assert calibrate_threshold(values, 0.75) == 1
        easy, hard = threshold_split(values, calibrate_threshold(values, 0.75))
        assert easy == ['i000']
        assert hard == ['i001', 'i002', 'i003']

    def test_only_sentinels(self):
        values = scores(inf, inf)
        assert calibrate_threshold(values, 0.5) == -inf
        assert calibrate_threshold(values, 1.0) == inf

    @given(score_lists, fractions)
    def test_threshold_never_admits_sentinel_below_one(self, values, p):
        assume(p < 1.0)
        easy, _ = threshold_split(values, calibrate_threshold(values, p))
        assert not {v.image_id for v in values if v.is_sentinel} & set(easy)


class TestSplits:
    def test_easy_count_rounds_half_up(self):
        assert easy_count(0.5, 5) == 3
        assert easy_count(0.25, 10) == 3
        assert easy_count(0.75, 10) == 8
        assert easy_count(0.3, 10) == 3
        assert easy_count(1.0, 7) == 7
        assert easy_count(0.0, 7) == 0

    def test_rank_split_example(self):
        easy, hard = rank_split(scores(3, 1, 2, 4), 0.5)
        assert easy == ['i001', 'i002']
        assert hard == ['i000', 'i003']

    def test_rank_split_ties_by_id(self):
        easy, hard = rank_split(scores(1, 1, 1, 1), 0.5)
        assert easy == ['i000', 'i001']

    def test_rank_split_keeps_sentinels_hard(self):
        values = scores(1, inf, inf, inf)
        easy, hard = rank_split(values, 0.75)
        assert easy == ['i000']
        assert hard == ['i001', 'i002', 'i003']
        easy, _ = rank_split(values, 1.0)
        assert len(easy) == 4

    def test_threshold_split_example(self):
        easy, hard = threshold_split(scores(3, 1, 2, 4), 2)
        assert easy == ['i001', 'i002']
        assert hard == ['i000', 'i003']

    @given(score_lists, fractions)
    def test_partitions(self, values, p):
        ids = {v.image_id for v in values}
        for easy, hard in (
            rank_split(values, p),
            threshold_split(values, calibrate_threshold(values, p)),
        ):
            assert set(easy) | set(hard) == ids
            assert not set(easy) & set(hard)
            assert easy == sorted(easy) and hard == sorted(hard)
        quota = easy_count(p, len(values))
        finite = sum(1 for v in values if not v.is_sentinel)
        expected = quota if p == 1.0 else min(quota, finite)
        assert len(rank_split(values, p)[0]) == expected

    @given(score_lists, fractions)
    def test_threshold_split_covers_rank_split(self, values, p):
        # exact whenever p * N is whole and no value is tied across the cutoff
        rank_easy, _ = rank_split(values, p)
        thr_easy, _ = threshold_split(values, calibrate_threshold(values, p))
        if p not in (0.0, 1.0) and abs(p * len(values) - round(p * len(values))) < 1e-9:
            assert set(rank_easy) <= set(thr_easy)
            if len({v.value for v in values}) == len(values):
                assert rank_easy == thr_easy

    @given(score_lists)
    def test_easy_sets_nested_in_p(self, values):
        previous = set()
        for p in (0.0, 0.25, 0.5, 0.75, 1.0):
            easy = set(rank_split(values, p)[0])
            assert previous <= easy
            previous = easy

    @given(score_lists, fractions)
    def test_easy_never_harder_than_hard(self, values, p):
        by_id = {v.image_id: v.value for v in values}
        easy, hard = rank_split(values, p)
        if easy and hard:
            assert max(by_id[i] for i in easy) <= min(by_id[i] for i in hard)
