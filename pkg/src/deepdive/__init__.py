"""Disentangled marginal/conditional variational encoding for joint
reconstruction and forecasting, plus the numerical certification suite
for the derivations the method rests on."""

__version__ = "0.1.0"
