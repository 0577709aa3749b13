import math

import numpy as np
import pytest

from statmix.imagecore import Image


def brute_mean(img, c):
    total = 0.0
    for w in range(img.width):
        for h in range(img.height):
            total += float(img.pixels[w, h, c])
    return total / (img.width * img.height)


def brute_std(img, c):
    mu = brute_mean(img, c)
    acc = 0.0
    for w in range(img.width):
        for h in range(img.height):
            d = float(img.pixels[w, h, c]) - mu
            acc += d * d
    return math.sqrt(acc / (img.width * img.height))


def random_image(rng, w=32, h=32, c=3, label=0):
    return Image(rng.random((w, h, c)), label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


# one PASS/FAIL line per acceptance criterion in the terminal summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        _criteria[number] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"AC{number:02d} {status}  {title}")
