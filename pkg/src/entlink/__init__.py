"""Desk-scale simulator for free-space distribution of polarization-entangled
photon pairs: channel events, sync-pulse coincidences, CHSH statistics and an
entanglement-based BB84 key pipeline."""

__version__ = "0.1.0"
