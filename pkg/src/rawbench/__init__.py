"""RAW vs RGB classification benchmark: ISP simulation, RAW inputs, tiny CNNs and timing."""

__version__ = "0.1.0"
