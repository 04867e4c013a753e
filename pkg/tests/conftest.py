import pytest

from gsgn import training
from gsgn.checkpoint import save_checkpoint
from gsgn.data import default_styles, make_synthetic_dataset
from gsgn.models import desk_config


@pytest.fixture(scope="session")
def toy_multitask_checkpoint(tmp_path_factory):
    """A small task-adaptive checkpoint trained a few steps, on disk."""
    ds = make_synthetic_dataset(24, default_styles(), seed=21)
    cfg = training.TrainConfig(iterations=4, batch_size=4, seed=21,
                               learning_rate=1e-3)
    ckpt, _ = training.run_training("supervised-multitask", ds,
                                    desk_config(), cfg)
    path = tmp_path_factory.mktemp("ckpt") / "toy_mt.gsgn"
    save_checkpoint(ckpt, path)
    return path


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory):
    from gsgn.data import write_dataset_dir
    ds = make_synthetic_dataset(12, default_styles(), seed=22)
    root = tmp_path_factory.mktemp("data") / "synth"
    write_dataset_dir(ds, root)
    return root
