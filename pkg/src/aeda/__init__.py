"""Autoencoder-based domain adaptation of speaker embeddings for PLDA scoring."""

from .datasets import (Domain, EmbeddingSet, SynthConfig, TrialList, generate_synthetic,
                       load_set, save_set, subset_one_channel)
from .evaluation import (DCF08, DCF10, DcfParams, FisherLDA, ScoreReport, compute_eer,
                         compute_min_dcf, score_report, variability_stats)
from .network import AEDA, DAEBaseline, TrainConfig, adapt, train_aeda, train_dae_baseline
from .pipeline import DataBundle, Suite, SystemSpec, run_comparison, run_system
from .plda import TwoCovariancePLDA, score_llr, train_plda
from .preprocess import LengthNormalizer, Whitener, fit_whitener, length_normalize
from .sparse import Dictionary, SparseReconstructor, build_dictionary, sparse_code

__all__ = [
    "AEDA", "DAEBaseline", "DCF08", "DCF10", "DataBundle", "DcfParams", "Dictionary",
    "Domain", "EmbeddingSet", "FisherLDA", "LengthNormalizer", "ScoreReport",
    "SparseReconstructor", "Suite", "SynthConfig", "SystemSpec", "TrainConfig", "TrialList",
    "TwoCovariancePLDA", "Whitener", "adapt", "build_dictionary", "compute_eer",
    "compute_min_dcf", "fit_whitener", "generate_synthetic", "length_normalize", "load_set",
    "run_comparison", "run_system", "save_set", "score_llr", "score_report", "sparse_code",
    "subset_one_channel", "train_aeda", "train_dae_baseline", "train_plda",
    "variability_stats",
]

__version__ = "0.1.0"
