"""lcfi: fault injection for a textual LLVM-IR subset.

The pipeline instruments a module with stable instruction indices, resolves
YAML-described targets to value-producing instructions, runs a golden profile
under a deterministic interpreter, then replays the program N times with
bounded errors injected at the selected dynamic occurrences and classifies
each run's outcome.
"""

__version__ = "0.1.0"
