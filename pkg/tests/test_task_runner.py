import pytest

from seeding import derive_seed, rng_for
from task_runner import SEQUENTIAL, TaskRunner


def test_results_in_task_order():
    assert TaskRunner(4).map(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    assert SEQUENTIAL.map(lambda x: x + 1, [1, 2]) == [2, 3]


def test_callback_sees_start_and_stop():
    events = list()
    TaskRunner(2, callback=lambda event, count: events.append((event, count))).map(str, range(3))
    assert events == [("start", 3), ("stop", 3)]


def test_inner_runner_is_sequential():
    assert TaskRunner(4).inner().threads == 1
    assert SEQUENTIAL.inner() is SEQUENTIAL


def test_threads_validated():
    with pytest.raises(ValueError):
        TaskRunner(0)


def test_errors_propagate():
    def explode(task):
        raise RuntimeError("task {}".format(task))

    with pytest.raises(RuntimeError):
        TaskRunner(2).map(explode, range(4))


def test_derived_seeds():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(7) < 2 ** 32
    assert rng_for(3).random() == rng_for(3).random()
