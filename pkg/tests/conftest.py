import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Six 32x32 toy pairs: 4 train, 1 val, 1 test."""
    from vidharm.synthesis import SynthConfig, build_dataset, load_manifest

    root = tmp_path_factory.mktemp("tiny")
    build_dataset(SynthConfig(out_dir=str(root), toy_sources=6, toy_size=32, seed=11,
                              splits={"train": 4, "val": 1, "test": 1}, inpaint_method="diffusion"))
    return load_manifest(root)
