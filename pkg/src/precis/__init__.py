"""Sparse precision-matrix estimation and de-biased inference for Gaussian graphical models."""
