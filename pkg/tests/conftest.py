import pytest

from dmkd.data import generate_dataset
from dmkd.experiments import train_teacher


@pytest.fixture(scope="session")
def small_dataset():
    """Tiny split so harness tests run in seconds."""
    return generate_dataset(3, n_train=96, n_test=48)


@pytest.fixture(scope="session")
def small_teacher(small_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("teacher") / "teacher.json"
    result = train_teacher(small_dataset, epochs=2, seed=0, out_path=path)
    return result, path


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
