"""Datasets, experiment orchestration, reports and the command-line entry point."""
