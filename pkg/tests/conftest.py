import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for synthdata

import synthdata  # noqa: E402
from geovuln import ingest, spatial  # noqa: E402


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    tables, cfg = synthdata.write_all(d)
    return {"dir": d, "tables": tables, "config": cfg}


@pytest.fixture(scope="session")
def dataset(synth_dir):
    series = ingest.parse_population_series(synth_dir["dir"] / "population.csv")
    return ingest.parse_dataset(synth_dir["dir"] / "indicators.csv", series=series)


@pytest.fixture(scope="session")
def grid_weights(synth_dir, dataset):
    pairs = spatial.read_adjacency_pairs(synth_dir["dir"] / "adjacency.csv")
    return spatial.build_weights(dataset, pairs)
