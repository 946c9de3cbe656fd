"""Delay-Doppler estimation for time-varying OFDM sensing channels."""
