import pytest

from multires.classifiers import ClassifierConfig
from multires.data import SyntheticConfig, synthetic_instances
from multires.harness import RunConfig
from multires.seq2res import Seq2ResConfig


def tiny_config(tmp_path=None, **run) -> RunConfig:
    cfg = RunConfig(seq2res=Seq2ResConfig(4, 4, 6),
                    classifier=ClassifierConfig(embed=4, hidden=4, layers=1, heads=2, ffn_mult=2),
                    fold_layout="equal", n_folds=3, **run)
    cfg.training.sep_epochs = 2
    cfg.training.cls_epochs = 2
    cfg.training.batch_size = 16
    cfg.training.checkpoint_every = 0
    cfg.data.n_labels = 8
    cfg.validate()
    if tmp_path is not None:
        cfg.output_dir = str(tmp_path / "reports")
    return cfg


@pytest.fixture(scope="session")
def tiny_instances():
    return synthetic_instances(SyntheticConfig(overlap=0.5, events_per_day=40, days=3, seed=3))
