"""Unsupervised speech units and resynthesis with an echo-state analyser,
a Dirichlet-prior categorical bottleneck and a neural source-filter vocoder."""

__version__ = "0.1.0"
