"""Image-based mean-variance regression engine.

Pipeline pieces: synthetic volumetric phantoms with analytic ground
truth, 3D-to-2D projection tiles, a small convolutional network with
per-target mean/log-variance heads trained under a masked Gaussian
negative log-likelihood, post-hoc variance calibration with confidence
intervals, stratified k-fold cross-validation, and an agreement-metric
report (ICC, R2, MAE, MAPE, AUC-ROC).
"""

__version__ = "0.1.0"

from .errors import CheckpointError, DataError, ValidationError

__all__ = ["CheckpointError", "DataError", "ValidationError", "__version__"]
