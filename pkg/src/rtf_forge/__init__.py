"""Relative-transfer-function simulation, pose-to-RTF regression and evaluation.

Modules
-------
room_sim     image-source shoebox simulator with fractional-delay rendering
signal       FFT/STFT framing, convolution and seeded white noise
rtf          RTF estimation, free-field model and ILD/IPD feature vectors
nn           numpy MLP with layer norm, IPD renormalisation and Adam
regressors   free-field, interpolation, piecewise-affine and MLP regressors
dataset      sampling grids, dataset generation, splits and the RTFD format
evaluate     per-frequency MAE with 95% confidence intervals
experiments  distance / SNR sweeps and repeated measurements
cli          ``rtf-forge`` command-line interface
"""

__version__ = "0.1.0"
