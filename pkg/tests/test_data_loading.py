"""Tests for CSV ingestion of series panels."""

import numpy as np
import pytest
from pydantic import ValidationError

from deepdgl.data import (
    SeriesCollection,
    describe,
    load_covariates,
    load_csv,
    phase_covariates,
    write_csv,
)
from deepdgl.errors import (
    CovariateMismatchError,
    CSVParseError,
    DuplicateSeriesIdError,
    NonNumericCellError,
    RaggedRowError,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCSV:
    def test_shape_and_order(self, tmp_path):
        values = _write(
            tmp_path / "values.csv",
            "series_id,v0,v1,v2,v3,v4\nb,1,2,3,4,5\na,6,7,8,9,10\n",
        )
        collection = load_csv(values)
        assert collection.n_series == 2
        assert collection.n_steps == 5
        # File order is kept, not sorted
        assert collection.series_ids == ("b", "a")
        assert collection.values[1, 0] == 6.0
        assert collection.covariates is None

    def test_non_numeric_cell_names_line(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1\na,1,2\nb,x,3\n")
        with pytest.raises(NonNumericCellError, match=r"values.csv:3"):
            load_csv(values)

    def test_duplicate_series_id(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0\na,1\nb,2\na,3\n")
        with pytest.raises(DuplicateSeriesIdError, match=r":4") as excinfo:
            load_csv(values)
        assert excinfo.value.line == 4

    def test_ragged_row(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1\na,1,2\nb,3,4,5\n")
        with pytest.raises(CSVParseError) as excinfo:
            load_csv(values)
        assert excinfo.value.line == 3

    def test_every_row_one_cell_longer(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1\na,1,2,3\nb,4,5,6\n")
        with pytest.raises(RaggedRowError, match="more cells") as excinfo:
            load_csv(values)
        assert excinfo.value.line == 2

    def test_short_row(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1\na,1,2\nb,3\n")
        with pytest.raises(CSVParseError) as excinfo:
            load_csv(values)
        assert excinfo.value.line == 3

    def test_bad_header(self, tmp_path):
        values = _write(tmp_path / "values.csv", "id,v0\na,1\n")
        with pytest.raises(CSVParseError, match="series_id"):
            load_csv(values)

    def test_covariates(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1,v2\na,1,2,3\n")
        cov = _write(tmp_path / "cov.csv", "t,c0,c1\n0,0.1,1\n1,0.2,1\n2,0.3,1\n")
        collection = load_csv(values, cov)
        assert collection.covariates.shape == (3, 2)
        np.testing.assert_array_equal(collection.covariates[:, 0], [0.1, 0.2, 0.3])

    def test_covariate_row_count_mismatch(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1,v2\na,1,2,3\n")
        cov = _write(tmp_path / "cov.csv", "t,c0\n0,0.1\n1,0.2\n")
        with pytest.raises(CovariateMismatchError, match="expected 3 covariate rows") as excinfo:
            load_csv(values, cov)
        assert excinfo.value.line == 4

    def test_covariate_steps_must_increase(self, tmp_path):
        values = _write(tmp_path / "values.csv", "series_id,v0,v1\na,1,2\n")
        cov = _write(tmp_path / "cov.csv", "t,c0\n0,0.1\n2,0.2\n")
        with pytest.raises(CovariateMismatchError, match="t must increase"):
            load_csv(values, cov)

    def test_future_covariates_start_past_the_data(self, tmp_path):
        cov = _write(tmp_path / "future.csv", "t,c0\n5,0.1\n6,0.2\n")
        block = load_covariates(cov, 2, start=5)
        np.testing.assert_array_equal(block[:, 0], [0.1, 0.2])
        with pytest.raises(CovariateMismatchError, match="from 4"):
            load_covariates(cov, 2, start=4)

    def test_write_then_load(self, tmp_path):
        original = SeriesCollection(
            values=np.array([[1.5, 2.25, -3.0], [0.1, 0.2, 0.3]]),
            series_ids=["x", "y"],
            covariates=phase_covariates(3, 24),
        )
        write_csv(original, tmp_path / "v.csv", tmp_path / "c.csv")
        loaded = load_csv(tmp_path / "v.csv", tmp_path / "c.csv")
        np.testing.assert_array_equal(loaded.values, original.values)
        np.testing.assert_array_equal(loaded.covariates, original.covariates)
        assert loaded.series_ids == original.series_ids


class TestSeriesCollection:
    def test_immutable_values(self):
        collection = SeriesCollection(values=[[1.0, 2.0]], series_ids=["a"])
        with pytest.raises(ValueError):
            collection.values[0, 0] = 5.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError, match="Non-finite"):
            SeriesCollection(values=[[1.0, np.nan]], series_ids=["a"])

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValidationError, match="unique"):
            SeriesCollection(values=[[1.0], [2.0]], series_ids=["a", "a"])

    def test_index_of(self):
        collection = SeriesCollection(values=[[1.0], [2.0]], series_ids=["a", "b"])
        assert collection.index_of("b") == 1
        with pytest.raises(KeyError, match="Unknown series_id"):
            collection.index_of("c")

    def test_phase_covariates_are_periodic(self):
        cov = phase_covariates(100, 24)
        assert cov.shape == (100, 2)
        np.testing.assert_array_equal(cov[5], cov[29])

    def test_missing_covariates_warn(self):
        collection = SeriesCollection(values=np.ones((1, 30)), series_ids=["a"])
        with pytest.warns(UserWarning, match="period 24"):
            cov = collection.covariate_matrix()
        assert cov.shape == (30, 2)

    def test_daily_granularity_period(self):
        collection = SeriesCollection(
            values=np.ones((1, 10)), series_ids=["a"], granularity="1 day"
        )
        assert collection.default_period == 7

    def test_describe(self):
        collection = SeriesCollection(values=[[1.0, 3.0]], series_ids=["a"])
        summary = describe(collection)
        assert summary["n_series"] == 1
        assert summary["max"] == 3.0
        assert summary["n_covariates"] == 0
