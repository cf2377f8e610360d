"""Function-level energy attribution.

Energy counters are sampled in the background while an instrumented program
logs begin/end checkpoints; afterwards each checkpoint interval is mapped
onto the energy series by interpolation.
"""

__version__ = "0.1.0"
