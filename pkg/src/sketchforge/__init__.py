"""sketchforge: parametric CAD sketch toolkit.

Sketch data model with constraints, token codecs, a damped least-squares
constraint solver, a hand-drawing simulator, toy autoregressive sequence
models, dataset/eval pipeline, CLI, and an HTTP service.
"""

__version__ = "0.1.0"

from . import core  # noqa: F401
