import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from ttswot.checkpoint import checkpoint_from_result
from ttswot.config import SMOKE
from ttswot.model import Model
from ttswot.synthetic import generate_synthetic_corpus
from ttswot.training import load_corpus, train

# 4 speakers, 6 pseudo-phones; 96 training utterances make about two minutes of audio
SMOKE_CORPUS_SEED = 0
N_TRAIN, N_HELDOUT = 96, 10

SMOKE_VARIANTS = {
    "baseline": SMOKE,
    "repeat": SMOKE,
    "no_kl": SMOKE.replace(kl_weight=0.0),
    "f0": SMOKE.replace(f0_loss=True),
}

ACCEPTANCE = {}


@dataclass
class SmokeRun:
    result: object
    checkpoint: bytes
    units: list
    units_text: str
    reservoir_before: bytes
    reservoir_at: dict
    seconds: float


@dataclass
class SmokeCorpus:
    train: object
    heldout: object


class SmokeRunner:
    """Trains each smoke variant at most once per session."""

    def __init__(self, corpus: SmokeCorpus):
        self.corpus = corpus
        self.runs = {}

    def __getitem__(self, name) -> SmokeRun:
        if name not in self.runs:
            self.runs[name] = self._run(SMOKE_VARIANTS[name])
        return self.runs[name]

    def _run(self, cfg) -> SmokeRun:
        corpus = self.corpus.train
        before = Model(cfg, corpus.speakers, corpus.total_unit_frames()).reservoir.fingerprint()
        seen = {}

        def on_checkpoint(result):
            seen[result.iteration] = result.model.reservoir.fingerprint()

        start = time.perf_counter()
        result = train(corpus, cfg, on_checkpoint=on_checkpoint)
        seconds = time.perf_counter() - start
        units = [result.model.encode(corpus.wave(i)) for i in range(len(corpus))]
        text = "".join(f"{Path(path).stem}\t{seq.to_text()}\n" for path, seq in zip(corpus.paths, units))
        return SmokeRun(result, checkpoint_from_result(result).to_bytes(), units, text, before, seen,
                        seconds)


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke_corpus")
    generate_synthetic_corpus(SMOKE_CORPUS_SEED, 4, 6, N_TRAIN + N_HELDOUT, out)
    full = load_corpus(out)
    return SmokeCorpus(full.subset(range(N_TRAIN)), full.subset(range(N_TRAIN, N_TRAIN + N_HELDOUT)))


@pytest.fixture(scope="session")
def smoke_runs(smoke_corpus):
    return SmokeRunner(smoke_corpus)


@pytest.fixture
def record():
    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])

