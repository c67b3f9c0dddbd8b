# Experiment harness: sweeps, artifact store, summaries, invariant checks, HTTP routes
__version__ = "0.3.0"
