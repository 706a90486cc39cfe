"""fairkan: alpha-fair uplink power allocation, hardness reductions, and
spline-network predictors with symbolic read-outs."""

__version__ = "0.1.0"
