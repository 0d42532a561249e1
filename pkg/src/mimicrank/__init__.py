"""Pairwise neural ranking trained from BM25 weak supervision, with
teacher-student distillation and privately aggregated teacher ensembles."""

__version__ = "0.1.0"
