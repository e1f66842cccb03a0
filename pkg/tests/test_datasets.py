import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import EmptyData, ParseError
from src.models.gp import Dataset, Hyperparams
from src.models.lab import CsvSource, GPPriorSource, ToySineSource
from src.services.datasets import (
    format_float,
    gen_gp_dataset,
    gen_toy_sine,
    load_csv,
    load_source,
    read_csv_rows,
    read_numeric_csv,
    sample_gp_prior,
    standardize,
    write_csv,
    write_dataset_csv,
)
from src.services.numerics import make_rng


@pytest.fixture
def table_csv(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text("a,b,target\n1.0,10,0.5\n2.0,20,1.5\n3.0,30,2.5\n4.0,40,3.5\n", encoding="utf-8")
    return path


class TestToySine:
    def test_noiseless_values(self):
        data = gen_toy_sine(5, noise_sd=0.0)
        assert_allclose(data.X[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
        assert data.y[0] == 0.0
        assert data.y[2] == pytest.approx(0.5 * np.sin(2.5 * np.pi))
        assert data.y[2] == pytest.approx(0.5)

    def test_noise_is_seeded(self):
        first = gen_toy_sine(30, 0.1, make_rng(3))
        second = gen_toy_sine(30, 0.1, make_rng(3))
        assert_allclose(first.y, second.y, rtol=0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            gen_toy_sine(1)


class TestGpPrior:
    def test_vanishing_signal_leaves_noise_variance(self):
        theta = Hyperparams(outputscale_sq=1e-12, lengthscales=[0.3], noise_sq=0.25)
        X = np.linspace(0, 1, 4000)[:, None]
        y = sample_gp_prior(X, theta, make_rng(0))
        assert np.var(y) == pytest.approx(0.25, rel=0.1)

    def test_inputs_on_the_box(self):
        theta = Hyperparams(outputscale_sq=1.0, lengthscales=[0.5, 0.5], noise_sq=0.1)
        data = gen_gp_dataset(50, 2, theta, make_rng(1), low=-2.0, high=3.0)
        assert data.X.shape == (50, 2)
        assert data.X.min() >= -2.0 and data.X.max() <= 3.0

    def test_source_is_reproducible(self):
        source = GPPriorSource(n=20, seed=4)
        assert_allclose(load_source(source).y, load_source(source).y, rtol=0)


class TestCsvLoad:
    def test_exact_values_without_standardization(self, table_csv):
        data = load_csv(table_csv, "target", standardize_data=False)
        assert_allclose(data.X, [[1, 10], [2, 20], [3, 30], [4, 40]])
        assert_allclose(data.y, [0.5, 1.5, 2.5, 3.5])
        assert data.standardization is None

    def test_standardized_columns(self, table_csv):
        data = load_csv(table_csv, "target")
        assert_allclose(data.X.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(data.X.std(axis=0), 1.0)
        assert data.y.mean() == pytest.approx(0.0, abs=1e-12)
        assert data.y.std() == pytest.approx(1.0)

    def test_unstandardize_round_trip(self, table_csv):
        data = load_csv(table_csv, "target")
        assert_allclose(data.standardization.unstandardize_y(data.y), [0.5, 1.5, 2.5, 3.5])

    def test_constant_column_keeps_unit_scale(self):
        data = standardize(Dataset(X=np.column_stack([np.ones(4), np.arange(4.0)]), y=np.arange(4.0)))
        assert_allclose(data.X[:, 0], 0.0)

    def test_csv_source_flag(self, table_csv):
        raw = load_source(CsvSource(path=str(table_csv), target_column="target", standardize=False))
        assert_allclose(raw.y, [0.5, 1.5, 2.5, 3.5])

    def test_missing_target(self, table_csv):
        with pytest.raises(EmptyData):
            load_csv(table_csv, "nope")


class TestCsvErrors:
    def test_unparseable_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,y\n1,2\n3,oops\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            read_numeric_csv(path)
        assert (info.value.row, info.value.col) == (2, 1)

    def test_non_finite_cell(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("a,y\nnan,2\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            read_numeric_csv(path)
        assert (info.value.row, info.value.col) == (1, 0)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b,y\n1,2,3\n4,5\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            read_numeric_csv(path)
        assert info.value.row == 2

    def test_rejected_row_is_logged_then_raised(self, tmp_path, caplog):
        path = tmp_path / "bad.csv"
        path.write_text("a,y\n1,2\n3,oops\n5,6\n", encoding="utf-8")
        with caplog.at_level("WARNING", logger="src.services.datasets"):
            with pytest.raises(ParseError):
                read_numeric_csv(path)
        warnings = [r for r in caplog.records if r.levelname == "WARNING"]
        assert len(warnings) == 1
        assert "rejected row 2, column 1" in warnings[0].getMessage()

    @pytest.mark.parametrize("content", ["", "a,y\n", "a,y\n\n\n"])
    def test_empty(self, tmp_path, content):
        path = tmp_path / "empty.csv"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(EmptyData):
            read_numeric_csv(path)


class TestCsvWrite:
    def test_floats_round_trip_exactly(self, tmp_path):
        values = [0.1, 1 / 3, 1e-300, -2.5e17]
        path = write_csv(tmp_path / "out" / "floats.csv", ["v"], ([v] for v in values))
        header, rows = read_csv_rows(path)
        assert header == ["v"]
        assert [float(row[0]) for row in rows] == values

    def test_format_float_is_shortest_repr(self):
        assert format_float(np.float64(0.1)) == "0.1"

    def test_dataset_write_then_load(self, tmp_path):
        data = gen_toy_sine(12, 0.1, make_rng(2))
        path = write_dataset_csv(tmp_path / "data.csv", data)
        loaded = load_csv(path, "y", standardize_data=False)
        assert_allclose(loaded.X, data.X, rtol=0)
        assert_allclose(loaded.y, data.y, rtol=0)

    def test_toy_source_matches_generator(self):
        source = ToySineSource(n=10, noise_sd=0.2, seed=5)
        assert_allclose(load_source(source).y, gen_toy_sine(10, 0.2, make_rng(5)).y, rtol=0)
