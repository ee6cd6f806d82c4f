"""trainscape: time-travelling visualization of classifier decision landscapes.

Fits one projection/inverse-projection autoencoder per subject-training
epoch under neighbor-, boundary-, reconstruction- and temporal-preservation
constraints, rasterizes the resulting class territories, measures all four
preservation properties, and serves the artifacts to an interactive UI.
"""

__version__ = "0.1.0"
