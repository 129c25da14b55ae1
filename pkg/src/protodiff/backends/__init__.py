from .analytic import AnalyticBackend
from .base import BackendCapabilities, Condition, DenoiserBackend, FeatureRecord
from .corpus import (
    CORPUS_SCENARIOS,
    ToyCorpusSpec,
    ToySample,
    apply_scenario_effect,
    generate_toy_corpus,
    read_manifest,
    render_clean_scene,
    write_corpus,
)
from .toy_model import (
    DEFAULT_VOCAB,
    NULL_TOKEN,
    ToyBackend,
    ToyUNet,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainSpec, corpus_condition, train_toy_denoiser, validation_epsilon_mse

__all__ = [
    "AnalyticBackend",
    "BackendCapabilities",
    "Condition",
    "DenoiserBackend",
    "FeatureRecord",
    "CORPUS_SCENARIOS",
    "ToyCorpusSpec",
    "ToySample",
    "apply_scenario_effect",
    "generate_toy_corpus",
    "read_manifest",
    "render_clean_scene",
    "write_corpus",
    "DEFAULT_VOCAB",
    "NULL_TOKEN",
    "ToyBackend",
    "ToyUNet",
    "load_checkpoint",
    "save_checkpoint",
    "TrainSpec",
    "corpus_condition",
    "train_toy_denoiser",
    "validation_epsilon_mse",
]
