"""PPG-conditioned vital-sign waveform reconstruction with flow matching over diagonal state space blocks."""

__version__ = "0.1.0"
