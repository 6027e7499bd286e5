"""Counter-based random streams keyed by (master seed, purpose, day).

Each purpose gets its own Philox stream per day, so a run is reproducible
regardless of how runs are scheduled, and changing how much randomness one
component consumes never shifts the draws of another.
"""

import numpy as np

STREAMS = {
    "population": 0,
    "seeding": 1,
    "contacts": 2,
    "disease": 3,
    "tests": 4,
    "inference": 5,
}


def stream(master_seed: int, purpose: str, day: int = 0) -> np.random.Generator:
  key = np.random.SeedSequence([int(master_seed), STREAMS[purpose], int(day)])
  return np.random.Generator(np.random.Philox(key))


def derive_seed(*parts: int) -> int:
  """Deterministic 63-bit seed from integer parts (e.g. base seed and restart)."""
  return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0]
             >> np.uint64(1))
