import json

import pytest

import checks


def _all_passed(results):
    failed = [(result.suite, result.name, result.value, result.bound) for result in results if not result.passed]
    assert not failed


def test_orthogonality_suite():
    results = checks.orthogonality_suite(n=10000, seed=0)
    _all_passed(results)
    names = [result.name for result in results]
    assert "plm m[A1:A2]" in names
    assert "naive plm m[A1]" in names
    assert sum(1 for name in names if name.startswith("irm")) == 12
    assert all("sqrt(n)" in result.detail for result in results)


def test_fwl_suite():
    _all_passed(checks.fwl_suite(n=300, p=5, seed=1))


def test_identities_suite():
    results = checks.identities_suite(seed=0)
    _all_passed(results)
    antisymmetry = next(result for result in results if result.name == "aipw antisymmetry")
    assert antisymmetry.value == 0.0


def test_double_robustness_suite():
    results = checks.double_robustness_suite(n=5000, replicates=4, seed=0)
    _all_passed(results)
    assert [result.name for result in results] == ["oracle m, wrong g", "oracle g, wrong m", "both wrong",
                                                   checks.DR_REGRESSION]
    by_name = {result.name: result for result in results}
    assert by_name[checks.DR_REGRESSION].value > 3.0
    assert by_name["oracle m, wrong g"].value < by_name["oracle m, wrong g"].bound


def test_unknown_suite():
    with pytest.raises(ValueError):
        checks.run_checks(["speed"])


def test_write_checks(tmp_path):
    results = [checks.CheckResult("fwl", "a", True, 0.0, 1e-8), checks.CheckResult("fwl", "b", False, 1.0, 1e-8)]
    paths = checks.write_checks(results, str(tmp_path))
    with open(paths[1]) as json_file:
        summary = json.load(json_file)
    assert summary["passed"] is False
    assert summary["n_failed"] == 1
    assert (tmp_path / "checks.csv").exists()
