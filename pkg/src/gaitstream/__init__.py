"""Data layer for a human-rollator digital twin: sEMG/IMU gait processing,
classification and streaming turning-intention alerts."""

__version__ = "0.1.0"
