"""Secondary-user access policies for Markovian primary channels observed through ARQ feedback."""

__version__ = "0.1.0"
