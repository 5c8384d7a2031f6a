"""CST-AFNet: multi-scale 1-D convolutions, a bidirectional GRU and dual
(temporal + channel) attention over network-flow features, trained with
exact hand-derived gradients."""

__version__ = "0.1.0"
