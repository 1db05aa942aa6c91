"""Experiment configuration, Monte Carlo runs, and the command line."""
