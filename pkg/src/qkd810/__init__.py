"""Entanglement-based QKD over two-mode telecom fiber at 810 nm: fiber
modes, link Monte Carlo, coincidence analysis, key rates, tag files and
offset synchronization."""

from .errors import Qkd810Error
from .keyrate import SecurityParams, secure_key_rate, crossover_analysis
from .tagio import TagStream

__version__ = "0.1.0"

__all__ = ["Qkd810Error", "SecurityParams", "TagStream", "crossover_analysis", "secure_key_rate", "__version__"]
