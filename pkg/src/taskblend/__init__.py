"""Multi-task loss weighting."""
