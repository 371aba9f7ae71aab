"""HEp-2 cell classification toolkit: a from-scratch CNN, specimen-aware
data handling and leave-one-specimen-out evaluation."""

__version__ = "0.1.0"
