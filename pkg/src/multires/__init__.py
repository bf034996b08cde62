"""Multi-resident activity recognition: resident separation and multi-label classifiers on numpy."""
from .classifiers import ClassifierConfig, ClassifierModel, run_two_stage
from .data import SyntheticConfig, generate_synthetic, parse_casas, synthetic_instances
from .harness import RunConfig, load_config, make_fold_plan, run_all
from .metrics import bleu, classification_report
from .seq2res import Seq2ResConfig, Seq2ResModel, seq2res_generate

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig", "ClassifierModel", "RunConfig", "Seq2ResConfig", "Seq2ResModel", "SyntheticConfig",
    "bleu", "classification_report", "generate_synthetic", "load_config", "make_fold_plan", "parse_casas",
    "run_all", "run_two_stage", "seq2res_generate", "synthetic_instances",
]
