"""Wave scheduling under stochastic inventory arrivals."""

__version__ = "0.1.0"
