"""emevlab: eigenmatrix/eigenvector CSI feedback laboratory for mmWave massive MIMO."""

__version__ = "0.1.0"
