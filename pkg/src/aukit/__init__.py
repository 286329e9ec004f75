"""Facial action unit detection toolkit.

Per-frame attention learning over a convolutional backbone, a statistical
AU relation graph, and a stacked spatio-temporal graph convolutional
network with adaptive edge weights, trainable end to end on synthetic
sequence data.
"""

__version__ = "0.1.0"
