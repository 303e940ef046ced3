"""HE-LSTM toolkit for heterogeneous, irregularly sampled event sequences."""

__version__ = "0.1.0"
