"""Classical and quantum mixture-density networks with an exact statevector simulator."""

__version__ = "0.1.0"
