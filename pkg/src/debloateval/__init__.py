"""Toolkit for validating debloated program variants against their originals.

Combines differential testing with template-based mutational fuzzing, binary
size/library metrics, and code-reuse gadget set analysis.
"""

__version__ = "0.1.0"
