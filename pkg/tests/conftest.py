import pytest
import torch

from daec2.event_io import load_manifest
from daec2.nets import NetworkConfig
from daec2.synth import write_synth_dataset


def manifests_for(info, splits=("train", "test")):
    m = {}
    for split in splits:
        m[f"frames_{split}"] = load_manifest(info["frames_root"], split)
        m[f"events_{split}"] = load_manifest(info["events_root"], split,
                                             width=info["width"],
                                             height=info["height"])
    return m


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """Tiny unpaired frame/event digit dataset: 60 train + 40 test per domain."""
    root = tmp_path_factory.mktemp("synth_small")
    info = write_synth_dataset(root, train_per_class=6, test_per_class=4, seed=0)
    return {"info": info, "manifests": manifests_for(info)}


@pytest.fixture()
def tiny_net_config():
    return NetworkConfig(base_width=8, disc_width=8, refine_width=8)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
