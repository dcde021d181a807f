"""Data-free model extraction at desk scale."""
