"""Simulated serverless BFT transaction processing: shim, executors, verifier, storage."""

__version__ = "0.1.0"
