"""scicorpus: hierarchical curation pipeline for scientific text corpora."""

__version__ = "0.1.0"
