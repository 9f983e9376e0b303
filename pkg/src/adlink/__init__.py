"""Multi-site ad linking with giant-component edge filtering."""

__version__ = "0.1.0"
