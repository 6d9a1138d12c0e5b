"""Record validation and the CSV schema round trip."""

import math

import numpy as np
import pytest

from qvaft.data import Dataset, SubjectRecord, read_csv, write_csv
from qvaft.errors import DataError


class TestRecordInvariants:
    def test_valid_records(self):
        SubjectRecord(1.0, 1.0, 1, 0.5, (1.0, -0.3))
        SubjectRecord(1.0, 2.0, 0, 0.0, (0.0,))
        SubjectRecord(1.0, math.inf, 0, 0.0, ())

    def test_event_needs_equal_endpoints(self):
        with pytest.raises(DataError):
            SubjectRecord(1.0, 2.0, 1)

    def test_interval_needs_width(self):
        with pytest.raises(DataError):
            SubjectRecord(1.0, 1.0, 0)

    def test_inverted_interval(self):
        with pytest.raises(DataError):
            SubjectRecord(2.0, 1.0, 0)

    def test_truncation_below_left_endpoint(self):
        with pytest.raises(DataError):
            SubjectRecord(1.0, 2.0, 0, trunc=1.5)

    def test_positive_left_endpoint(self):
        with pytest.raises(DataError):
            SubjectRecord(0.0, 1.0, 0)

    def test_finite_covariates(self):
        with pytest.raises(DataError):
            SubjectRecord(1.0, 2.0, 0, x=(math.inf,))

    def test_positive_switch_time(self):
        with pytest.raises(DataError):
            SubjectRecord(1.0, 2.0, 0, onset=-1.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        recs = [
            SubjectRecord(1.25, 1.25, 1, 0.5, (1.0, -0.37), 2.5),
            SubjectRecord(0.7, 3.0, 0, 0.0, (0.0, 1.1), math.inf),
            SubjectRecord(2.0, math.inf, 0, 1.0, (1.0, 0.0), math.inf),
        ]
        ds = Dataset.from_records(recs, ("expo", "age"))
        path = tmp_path / "d.csv"
        write_csv(ds, path)
        back = read_csv(path)
        assert back.covariate_names == ("expo", "age")
        np.testing.assert_array_equal(back.y_lower, ds.y_lower)
        np.testing.assert_array_equal(back.y_upper, ds.y_upper)
        np.testing.assert_array_equal(back.event, ds.event)
        np.testing.assert_array_equal(back.trunc, ds.trunc)
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.onset, ds.onset)

    def test_empty_and_inf_mean_right_censoring(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y_l,y_u,delta,trunc,x1\n"
                        "1.0,,0,0,1\n"
                        "2.0,inf,0,0,0\n")
        ds = read_csv(path)
        assert np.all(np.isinf(ds.y_upper))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y_l,y_u,delta\n1,2,0\n")
        with pytest.raises(DataError, match="trunc"):
            read_csv(path)

    def test_row_numbered_error(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y_l,y_u,delta,trunc\n1,2,0,0\n3,2,0,0\n")
        with pytest.raises(DataError, match="row 2"):
            read_csv(path)

    def test_bad_delta(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y_l,y_u,delta,trunc\n1,2,2,0\n")
        with pytest.raises(DataError, match="delta"):
            read_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y_l,y_u,delta,trunc\noops,2,0,0\n")
        with pytest.raises(DataError, match="row 1"):
            read_csv(path)
