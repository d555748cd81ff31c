import pathlib
import random

import pytest

from omnibor.gitoid import ArtifactId, HashAlgorithm
from omnibor.manifest import InputManifest, ManifestRecord

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
HASH_CORPUS = FIXTURES / "hash_corpus"

# one line per acceptance check, echoed after the run (test_acceptance.py)
SCOREBOARD = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if SCOREBOARD:
        terminalreporter.section("acceptance scoreboard")
        for line in SCOREBOARD:
            terminalreporter.write_line(line)


@pytest.fixture
def omnibor_dir(tmp_path):
    path = tmp_path / "omnibor"
    path.mkdir()
    return path


def random_artifact_id(rng: random.Random, algorithm: HashAlgorithm) -> ArtifactId:
    return ArtifactId(algorithm, rng.getrandbits(8 * algorithm.digest_size)
                      .to_bytes(algorithm.digest_size, "big"))


def random_manifest(rng: random.Random, algorithm: HashAlgorithm,
                    max_records: int = 12) -> InputManifest:
    records = []
    for _ in range(rng.randrange(max_records + 1)):
        child = random_artifact_id(rng, algorithm)
        bom = random_artifact_id(rng, algorithm) if rng.random() < 0.4 else None
        records.append(ManifestRecord(child, bom))
    return InputManifest.build(algorithm, records)
