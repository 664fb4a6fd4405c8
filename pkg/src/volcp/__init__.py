"""Calibrated predictive intervals for object volumes extracted from 3D images.

Standard and weighted (covariate-shift-robust) split conformal prediction on
top of a tri-mask volume estimator, with a synthetic sphere/SNR benchmark.
"""

__version__ = "0.1.0"
