"""Signal-free intersection simulator with intent-driven right-of-way arbitration."""

__version__ = "0.1.0"
