"""Datasets, training, persistence, experiments and the command line."""
