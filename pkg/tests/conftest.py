"""Shared fixtures. Generated datasets and trained models are session-scoped
because training is the slow part of the suite."""
import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from missmarple.model import build_mmv, build_mmva  # noqa: E402
from missmarple.patches import build_corpus, read_manifest  # noqa: E402
from missmarple.synth import SynthConfig, generate_dataset  # noqa: E402
from missmarple.training import Hyper, run_trial, select_donor  # noqa: E402

# desk-scale protocol: one iteration of at most 10 epochs
DESK = Hyper(epochs=10, n_iterations=1)

# wall-clock seconds of the session's setup stages, read by the acceptance suite
TIMINGS = {}


def _mmv_factory(seed):
    return build_mmv(seed=seed)


@pytest.fixture(scope="session")
def coarse_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("coarse")
    t = time.perf_counter()
    generate_dataset(SynthConfig(regime="coarse", seed=0), str(out))
    TIMINGS["coarse_gen"] = time.perf_counter() - t
    return out


@pytest.fixture(scope="session")
def fine_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fine")
    generate_dataset(SynthConfig(regime="fine", seed=0), str(out))
    return out


@pytest.fixture(scope="session")
def coarse_manifest(coarse_dir):
    return read_manifest(str(coarse_dir / "manifest.tsv"))


@pytest.fixture(scope="session")
def coarse_corpus(coarse_manifest):
    t = time.perf_counter()
    corpus = build_corpus(coarse_manifest, seed=0)
    TIMINGS["coarse_corpus"] = time.perf_counter() - t
    return corpus


@pytest.fixture(scope="session")
def fine_corpus(fine_dir):
    return build_corpus(read_manifest(str(fine_dir / "manifest.tsv")), seed=0)


@pytest.fixture(scope="session")
def coarse_trial(coarse_corpus):
    """MM-V trained on the coarse corpus."""
    t = time.perf_counter()
    trial = run_trial(_mmv_factory, coarse_corpus, DESK)
    TIMINGS["coarse_train"] = time.perf_counter() - t
    return trial


@pytest.fixture(scope="session")
def donor(coarse_trial):
    return select_donor(coarse_trial)


@pytest.fixture(scope="session")
def fine_mmv_trial(fine_corpus):
    """MM-V alone on the fine corpus (the no-transfer baseline)."""
    return run_trial(_mmv_factory, fine_corpus, DESK)


def mmva_factory(donor, built=None):
    def make(seed):
        net = build_mmva(donor_weights=donor, seed=seed)
        if built is not None:
            built.append(net)
        return net
    return make


@pytest.fixture(scope="session")
def fine_mmva(fine_corpus, donor):
    """(trial, networks as left at the end of training) for MM-V-A on the fine corpus."""
    built = []
    trial = run_trial(mmva_factory(donor, built), fine_corpus, DESK)
    return trial, built


@pytest.fixture(scope="session")
def fine_mmva_trial(fine_mmva):
    return fine_mmva[0]


def trained(trial, builder):
    net = builder()
    net.params = {k: v.copy() for k, v in trial.best_run.weights.items()}
    return net


# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {desc}  [{detail}]")
