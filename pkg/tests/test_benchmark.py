import pytest
from pydantic import ValidationError
from core.benchmark import (
    CLASS_AGNOSTIC,
    PERSON_AWARE,
    SynthBenchConfig,
    generate_benchmark,
)
from core.dataset import relative_face_size
from core.detectors import is_dominant_pair
from core.errors import BenchmarkError
from core.geometry import iou


class TestGenerate:
    def test_empty(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=0))
        assert len(bench.dataset) == 0
        assert len(bench.score_table) == 0

    def test_deterministic(self):
        cfg = SynthBenchConfig(image_count=25, master_seed=4)
        a, b = generate_benchmark(cfg), generate_benchmark(cfg)
        assert a.dataset == b.dataset
        assert a.score_tables == b.score_tables
        assert [a.fast.detect(img) for img in a.dataset] == [b.fast.detect(img) for img in b.dataset]

    def test_seed_changes_everything(self):
        a = generate_benchmark(SynthBenchConfig(image_count=25, master_seed=4))
        b = generate_benchmark(SynthBenchConfig(image_count=25, master_seed=5))
        assert a.dataset.images != b.dataset.images
        assert a.dataset.name == 'synthetic-4'

    def test_image_ids(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=12))
        assert bench.dataset.ids[:2] == ['img_00000', 'img_00001']
        assert bench.dataset.ids[-1] == 'img_00011'

    def test_faces_fit_and_do_not_overlap(self):
        cfg = SynthBenchConfig(image_count=150, master_seed=8)
        for img in generate_benchmark(cfg).dataset:
            assert 1 <= len(img.faces)
            for k, face in enumerate(img.boxes):
                assert 0 <= face.x_min and face.x_max <= img.width
                assert 0 <= face.y_min and face.y_max <= img.height
                assert relative_face_size(face, img) <= cfg.max_face_size + 1e-9
                assert all(iou(face, other) == 0.0 for other in img.boxes[k + 1:])

    @pytest.mark.slow
    def test_mean_face_count(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=10_000, master_seed=1))
        assert bench.dataset.num_faces / len(bench.dataset) == pytest.approx(2.5, abs=0.05)

    def test_infeasible_placement(self):
        cfg = SynthBenchConfig(
            image_count=20,
            min_face_size=0.9,
            max_face_size=1.0,
            size_median=0.95,
            extra_faces_mean=5.0,
            placement_retries=5,
        )
        with pytest.raises(BenchmarkError, match='could not place'):
            generate_benchmark(cfg)

    def test_size_bounds_validated(self):
        with pytest.raises(ValidationError):
            SynthBenchConfig(min_face_size=0.3, max_face_size=0.2)


class TestDetectorsAndScores:
    def test_shared_draws_make_a_dominant_pair(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=5))
        assert bench.fast.synthetic.seed == bench.slow.synthetic.seed
        assert is_dominant_pair(bench.fast.synthetic, bench.slow.synthetic)
        assert bench.fast.config.per_image_latency_s == 0.28
        assert bench.slow.config.per_image_latency_s == 1.89

    def test_independent_draws(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=5, shared_draws=False))
        assert bench.fast.synthetic.seed != bench.slow.synthetic.seed

    def test_score_tables_cover_every_image(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=30))
        assert set(bench.score_tables) == {CLASS_AGNOSTIC, PERSON_AWARE}
        for table in bench.score_tables.values():
            assert sorted(table.scores) == bench.dataset.ids

    def test_noiseless_score_is_expected_misses(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=30, class_agnostic_noise=0.0))
        fast = bench.fast.synthetic
        for img in bench.dataset:
            expected = sum(
                1.0 - fast.detection_probability(relative_face_size(box, img)) for box in img.boxes
            )
            assert bench.score_table.lookup(img.id) == pytest.approx(expected)

    def test_unpacks(self):
        bench = generate_benchmark(SynthBenchConfig(image_count=3))
        dataset, fast, slow, table = bench
        assert dataset is bench.dataset
        assert (fast, slow) == (bench.fast, bench.slow)
        assert table.name == CLASS_AGNOSTIC
