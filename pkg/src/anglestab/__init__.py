"""RMS phasor simulation and angle-stability studies for small SM/GFM test systems."""

__version__ = "0.1.0"
