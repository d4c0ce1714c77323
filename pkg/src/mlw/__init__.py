"""Continuous-logic workbench: exact-rational formula calculus, finite metric
structures, tree ranks, model constructors, and a Henkin-style forcing engine.
"""

__version__ = "0.1.0"
