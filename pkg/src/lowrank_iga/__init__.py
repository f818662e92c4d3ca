"""Low-rank Tucker-format solver for multipatch isogeometric discretizations."""

__version__ = "0.1.0"
