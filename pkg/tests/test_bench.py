import numpy as np
import pytest

from gmlm.bench import (
    BenchConfig,
    BenchRow,
    baseline_budget,
    bench_runtime,
    emit_plot,
    emit_plot_from_csv,
    read_rows_csv,
    rows_to_csv,
    CSV_HEADER,
)
from gmlm.predictor import PredictorConfig, init_predictor
from gmlm.tokens import CodecParams
from gmlm.world import WorldSpec


def tiny_setup(dim=32, layers=2, max_frames=128):
    params = CodecParams(groups=2, levels=2, codebook_size=8, latent_dim=2)
    spec = WorldSpec(params=params, semantic_vocab=8, speakers=4, p_noise=0.1, seed=0)
    cfg = PredictorConfig(params=params, sem_vocab=8, dim=dim, heads=2,
                          layers=layers, max_frames=max_frames)
    return init_predictor(cfg, seed=0), spec


def sample_rows():
    return [
        BenchRow("gipd", 32, 64, 8, 10.0, 1.0, 9, 0.5),
        BenchRow("gipd", 64, 64, 8, 12.0, 1.0, 9, 0.5),
        BenchRow("gipd-nocache", 32, 64, 8, 14.0, 1.5, 9, 0.5),
        BenchRow("gipd-nocache", 64, 64, 8, 20.0, 1.5, 9, 0.5),
    ]


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            BenchConfig((), (64,), (9,))
        with pytest.raises(ValueError):
            BenchConfig((32,), (64,), (9,), repetitions=2)
        with pytest.raises(ValueError):
            BenchConfig((32,), (64,), (9,), warmup=0)

    def test_baseline_budget(self):
        p = CodecParams(groups=2, levels=2, codebook_size=8, latent_dim=2)
        assert baseline_budget(27, p) == [24, 1, 1, 1]
        assert baseline_budget(4, p) == [1, 1, 1, 1]
        with pytest.raises(ValueError):
            baseline_budget(3, p)


class TestBenchRuntime:
    def test_rows_and_forward_counts(self):
        pred, spec = tiny_setup()
        cfg = BenchConfig(prompt_lens=(16,), target_lens=(16,), budgets=(9,),
                          repetitions=3, warmup=1, seed=1)
        rows = bench_runtime(pred, spec, cfg)
        assert [r.mode for r in rows] == ["gipd", "ipd-baseline", "gipd-nocache"]
        for r in rows:
            assert r.forwards == 9
            assert r.median_ms > 0 and r.iqr_ms >= 0
            assert 0.0 <= r.accuracy <= 1.0

    def test_nocache_is_slower(self):
        # re-encoding a long prompt every iteration must cost wall time
        pred, spec = tiny_setup(max_frames=160)
        cfg = BenchConfig(prompt_lens=(128,), target_lens=(32,), budgets=(9,),
                          repetitions=3, warmup=1, seed=2)
        rows = {r.mode: r for r in bench_runtime(pred, spec, cfg)}
        assert rows["gipd-nocache"].median_ms > rows["gipd"].median_ms

    def test_non_timing_columns_deterministic(self):
        pred, spec = tiny_setup()
        cfg = BenchConfig(prompt_lens=(8, 16), target_lens=(8,), budgets=(5,),
                          repetitions=3, warmup=1, seed=3)
        a = bench_runtime(pred, spec, cfg)
        b = bench_runtime(pred, spec, cfg)
        for ra, rb in zip(a, b):
            assert (ra.mode, ra.prompt_len, ra.target_len, ra.n_c,
                    ra.forwards, ra.accuracy) == (
                rb.mode, rb.prompt_len, rb.target_len, rb.n_c,
                rb.forwards, rb.accuracy)


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = sample_rows()
        path = tmp_path / "rows.csv"
        path.write_text(rows_to_csv(rows))
        back = read_rows_csv(path)
        assert back == rows

    def test_header_fixed(self):
        assert rows_to_csv([]).strip() == CSV_HEADER

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,2\n")
        with pytest.raises(ValueError):
            read_rows_csv(path)


class TestPlot:
    def test_series_and_points(self, tmp_path):
        path = tmp_path / "plot.svg"
        emit_plot(sample_rows(), path)
        svg = path.read_text()
        assert svg.count("<polyline") == 2
        assert svg.count("<circle") == 4
        assert "prompt_len" in svg

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        emit_plot(sample_rows(), a)
        emit_plot(sample_rows(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rows_write_nothing(self, tmp_path):
        path = tmp_path / "none.svg"
        with pytest.raises(ValueError):
            emit_plot([], path)
        assert not path.exists()

    def test_from_csv(self, tmp_path):
        csv_path = tmp_path / "rows.csv"
        csv_path.write_text(rows_to_csv(sample_rows()))
        svg_path = tmp_path / "plot.svg"
        emit_plot_from_csv(csv_path, svg_path)
        assert svg_path.exists()

    def test_bad_csv_writes_nothing(self, tmp_path):
        csv_path = tmp_path / "bad.csv"
        csv_path.write_text("garbage\n")
        svg_path = tmp_path / "plot.svg"
        with pytest.raises(ValueError):
            emit_plot_from_csv(csv_path, svg_path)
        assert not svg_path.exists()

    def test_x_axis_falls_back_to_target(self, tmp_path):
        rows = [
            BenchRow("gipd", 32, 64, 8, 10.0, 1.0, 9, 0.5),
            BenchRow("gipd", 32, 128, 8, 16.0, 1.0, 9, 0.5),
        ]
        path = tmp_path / "plot.svg"
        emit_plot(rows, path)
        assert "target_len" in path.read_text()
