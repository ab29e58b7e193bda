"""Implicit (energy-based) versus explicit (MSE) behavior cloning of
facilitator gaze in multiparty conversation."""

__version__ = "0.1.0"
