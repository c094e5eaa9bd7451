import numpy as np
import pytest

from config import Config
from dataset import Dataset, DatasetError, InteractionSpec, TreatmentColumn, read_csv, write_dataset_csv


def test_binary_values_checked():
    with pytest.raises(DatasetError):
        TreatmentColumn("A", "binary", np.array([0.0, 1.0, 2.0]))


def test_categorical_level_must_be_observed():
    with pytest.raises(DatasetError):
        TreatmentColumn("A", "categorical", np.array([0, 0, 2]), ("a", "b", "c"))


def test_indicator_rows_sum_to_one():
    treatment = TreatmentColumn("A", "categorical", np.array([0, 1, 2, 1]))
    indicators = treatment.indicators()
    assert np.array_equal(indicators.sum(axis=1), np.ones(4))
    assert treatment.non_reference_levels() == [1, 2]


def test_interaction_needs_distinct_factors():
    with pytest.raises(DatasetError):
        InteractionSpec(("A", "A"))
    assert InteractionSpec(("A", "B")).name == "A:B"


def test_regimen_categories_observed():
    X = np.zeros((4, 1))
    with pytest.raises(DatasetError):
        Dataset(X, np.zeros(4), regimen=np.array([1, 1, 3, 3]), regimen_labels=("1", "2", "3"))
    with pytest.raises(DatasetError):
        Dataset(X, np.zeros(4), regimen=np.array([0, 1, 2, 2]))
    dataset = Dataset(X, np.zeros(4), regimen=np.array([1, 2, 3, 3]))
    assert dataset.n_regimens == 3
    assert dataset.regimen_code("3") == 3


def test_dataset_is_read_only():
    dataset = Dataset(np.zeros((3, 2)), np.arange(3.0))
    with pytest.raises(ValueError):
        dataset.Y[0] = 1.0


def _write(path, text):
    path.write_text(text)
    return str(path)


CONFIG = {"treatments": [{"name": "A", "kind": "categorical", "levels": ["a", "b"], "reference": "b"},
                         {"name": "T", "kind": "binary"}]}


def test_read_csv(tmp_path):
    path = _write(tmp_path / "data.csv", "x1,x2,A,T,Y\n0.1,1.0,b,1,2.0\n0.2,3.0,a,0,1.0\n0.4,2.0,b,0,0.5\n")
    dataset = read_csv(path, Config(config=CONFIG))
    assert dataset.covariate_names == ("x1", "x2")
    assert np.allclose(dataset.Y, [2.0, 1.0, 0.5])
    art = dataset.treatment("A")
    assert art.levels == ("a", "b")
    assert art.reference == 1
    assert art.values.tolist() == [1, 0, 1]


def test_missing_cells_name_row_and_column(tmp_path):
    path = _write(tmp_path / "data.csv", "x1,x2,A,T,Y\n0.1,1.0,b,1,2.0\n0.2,,a,0,1.0\n0.3,NA,a,1,1.0\n")
    with pytest.raises(DatasetError) as error:
        read_csv(path, Config(config=CONFIG))
    assert "row 3 column x2" in str(error.value)
    assert "row 4 column x2" in str(error.value)


def test_drop_missing(tmp_path):
    path = _write(tmp_path / "data.csv", "x1,x2,A,T,Y\n0.1,1.0,b,1,2.0\n0.2,,a,0,1.0\n0.3,2.0,a,0,1.0\n")
    dataset = read_csv(path, Config(config=dict(CONFIG, drop_missing=True)))
    assert dataset.n == 2


def test_undeclared_level_rejected(tmp_path):
    path = _write(tmp_path / "data.csv", "x1,A,T,Y\n0.1,c,1,2.0\n0.2,a,0,1.0\n0.3,b,0,1.0\n")
    with pytest.raises(DatasetError):
        read_csv(path, Config(config=CONFIG))


def test_missing_regimen_column(tmp_path):
    path = _write(tmp_path / "data.csv", "x1,Y\n0.1,2.0\n0.2,1.0\n")
    with pytest.raises(DatasetError):
        read_csv(path, Config(config={}), require_regimen=True)


def test_written_csv_reads_back(tmp_path, categorical_dataset):
    path = str(tmp_path / "out.csv")
    config = write_dataset_csv(categorical_dataset, path)
    dataset = read_csv(path, Config(config=config))
    assert np.array_equal(dataset.X, categorical_dataset.X)
    assert np.array_equal(dataset.Y, categorical_dataset.Y)
    assert np.array_equal(dataset.treatment("ART").values, categorical_dataset.treatment("ART").values)
    assert dataset.treatment("ART").levels == ("NNRTI", "bPI", "DTG")


def test_take_permutes_oracle():
    dataset = Dataset(np.arange(4.0)[:, None], np.arange(4.0), oracle={"g": np.arange(4.0) * 2})
    subset = dataset.take([3, 1])
    assert subset.Y.tolist() == [3.0, 1.0]
    assert subset.oracle["g"].tolist() == [6.0, 2.0]
