"""Datasets, fixtures, benches, experiment drivers, and the CLI."""
