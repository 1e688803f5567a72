"""gbsg: graph-of-brain-structures grading.

Voxel-wise patch-based grading of registered volumes against a labeled
CN/AD template library, per-subject graphs of structure grading statistics,
elastic-net feature selection, and SVM / random-forest cohort classification.
"""

__version__ = "0.1.0"
