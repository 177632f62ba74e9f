import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dizikit.kernels import available_backends  # noqa: E402

BACKENDS = available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Each importable kernel module in turn."""
    return BACKENDS[request.param]


@pytest.fixture(scope="session")
def synth_scores():
    from dizikit.synth import synth_corpus

    return synth_corpus(200, seed=1)


@pytest.fixture(scope="session")
def synth_pieces(synth_scores):
    from dizikit.represent import segment

    return [p for s in synth_scores for p in segment(s)]


@pytest.fixture(scope="session")
def tfidf_classifier(synth_pieces):
    from dizikit.classify import ClassifierConfig, fit_pipeline

    return fit_pipeline(synth_pieces, ClassifierConfig(scheme="tfidf", seed=0))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
