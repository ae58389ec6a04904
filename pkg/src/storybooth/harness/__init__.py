"""Toy denoising pipeline, reports and command-line interface."""
