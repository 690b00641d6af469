"""Static deadlock detection for a small lock IR.

The pipeline parses ``.lir`` programs, runs a field-sensitive Andersen
points-to analysis, collects threads and lock guards, and reports double
locks, conflicting lock orders and condition variable misuse.
"""

from .analysis import Analysis, InvalidProgram, Options, analyze, analyze_text
from .detect import Diagnostic, DiagnosticKind
from .ir import ParseError, Program, parse_program, validate

__version__ = "0.1.0"

__all__ = [
    "Analysis", "Diagnostic", "DiagnosticKind", "InvalidProgram", "Options", "ParseError",
    "Program", "__version__", "analyze", "analyze_text", "parse_program", "validate",
]
