"""Open-vocabulary instance lifting for 3D Gaussian scenes.

Pipeline stages: synthetic data generation, per-gaussian instance
feature training, two-level codebook discretization, 3D-2D instance
association, multi-view semantic fusion, and text-query evaluation.
"""

__version__ = "0.1.0"
