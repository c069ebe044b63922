"""Semi-supervised detection of call-center agent malpractice.

Per-call segment percentages are optionally Gaussianized, optionally passed
through a restricted Boltzmann machine, and clustered into two groups with
k-means. The smaller cluster is flagged as malpractice.
"""

__version__ = "0.1.0"
