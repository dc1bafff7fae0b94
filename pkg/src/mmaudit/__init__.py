"""Multimodal error-slice auditing for black-box binary classifiers."""

from .biaslab import BiasSpec, SynthWorldSpec, synth_world, validity_check
from .config import AuditConfig, fixture_config, load_config
from .discovery import FitOptions, SliceAssignment, SliceModel, assign_slices, fit_error_only, fit_slice_model, rank_slices
from .evaluation import AuditReport, best_slice, bootstrap_audit, emit_report, precision_at_k
from .explain import TokenReport, distinctiveness, fit_tfidf, global_baseline, validate_attribute
from .fusion import fit_pca, fuse, standardize, transform_pca
from .ingest import Dataset, Sample, TokenDoc, load_dataset, metadata_to_text, tokenize

__version__ = "0.1.0"
