import pytest

from lazymar.model import ModelConfig, init_weights

TOY = ModelConfig()  # L=6, d=64, H=4, n_img=64, C=16, T=8


@pytest.fixture(scope="session")
def toy_weights():
    return init_weights(TOY, 42)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(n_layers=4, width=16, n_heads=2, n_img=12, n_cond=4,
                       n_classes=3, diff_steps=3, diff_width=8, token_dim=4)


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return init_weights(tiny_config, 7)


# -- acceptance summary ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")
