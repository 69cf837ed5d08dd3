"""memsteer: training-free test-time policy improvement.

The engine keeps a non-parametric memory of (state, action, return) triplets,
retrieves a similarity-ranked neighborhood for the current state, turns it
into advantage estimates, and steers a frozen base policy by adding the
scaled, normalized advantages to its logits. Everything is seeded and
desk-verifiable against exact dynamic-programming and grid-search oracles.
"""

from memsteer.memory import MemoryEntry, MemoryStore, Neighborhood, StateKey
from memsteer.config import EngineConfig

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "MemoryEntry",
    "MemoryStore",
    "Neighborhood",
    "StateKey",
    "__version__",
]
