import numpy as np
import pytest

from mtmn.corpus import Annotation, Sentence
from mtmn.model import MTMN, ModelConfig
from mtmn.sharing import SharingConfig
from mtmn.synthetic import corpus_embeddings, make_synthetic_corpus, random_embeddings

TINY = dict(D=8, d=4, K=2, m=2, T=2)


def tiny_model(C=3, sharing=None, seed=1, scale=None, **kw):
    dims = {**TINY, **kw}
    cfg = ModelConfig([f"c{i}" for i in range(C)], sharing=sharing or SharingConfig(), **dims)
    model = MTMN.create(cfg, seed=seed)
    if scale is not None:
        rng = np.random.default_rng(seed + 100)
        for p in model.trainable():
            p.assign(rng.uniform(-scale, scale, p.shape))
    return model


@pytest.fixture
def table():
    return random_embeddings([f"w{i}" for i in range(12)], 8, seed=3)


@pytest.fixture
def sentence():
    return Sentence(
        "s0",
        ["w1", "w2", "w3", "w4", "w5"],
        [Annotation(1, 1, "aspect", 0), Annotation(3, 4, "opinion", 2), Annotation(1, 2, "aspect", 1)],
    )


@pytest.fixture(scope="session")
def synthetic():
    corpus = make_synthetic_corpus(20, C=3, vocab=40, seed=0)
    return corpus, corpus_embeddings(corpus, 10, seed=0)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


_criteria: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and report.outcome != "failed":
        return
    mark = next((m for m in report.user_properties if m[0] == "criterion"), None)
    if mark is not None:
        number, title = mark[1]
        prev = _criteria.get(number, (title, "PASS"))[1]
        _criteria[number] = (title, "FAIL" if report.failed or prev == "FAIL" else "PASS")


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", (mark.kwargs["number"], mark.kwargs["title"])))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {outcome}  {title}")
