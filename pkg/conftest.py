from os import chdir, environ, getcwd, listdir, makedirs
from os.path import basename, dirname

from pytest import fixture


def pytest_sessionstart(session):
    """
    Run the session from the `tests` dir next to `pytest.ini`,
    so that schedules, traces, reports and plots land in `tests/output`
    """
    path = getcwd()
    while basename(path) != "tests":
        if "pytest.ini" in listdir(path):
            chdir("tests")
            break
        if dirname(path) == path:
            break
        chdir("..")
        path = getcwd()
    makedirs("output", exist_ok=True)


def pytest_addoption(parser):
    parser.addoption(
        "--save-artifacts",
        action="store_true",
        default=False,
        help="draw schedule and memory timelines to output/*.pdf",
    )


@fixture(scope="session")
def save_artifacts(request) -> bool:
    return request.config.option.save_artifacts


@fixture()
def testname() -> str:
    """Current test name with parametrization brackets flattened, usable as a file name"""
    name = environ.get("PYTEST_CURRENT_TEST").split(":")[-1].split(" ")[0]
    return name.replace("[", "_").replace("]", "")
