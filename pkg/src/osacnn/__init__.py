"""1D-CNN classification of obstructive sleep apnea severity from EDF polysomnography."""

__version__ = "0.1.0"
