"""Desk-scale VAE-EM calibration of Ronchigram aberrations."""
