"""Recurrent generation of drifting network parameters for temporal domain
generalization, with time-oblivious baselines and an experiment driver."""

__version__ = "0.1.0"
