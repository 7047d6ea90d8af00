"""GPS/INS integrated navigation with a spiking-network aid for GPS outages."""

__version__ = "0.1.0"
