"""Exception hierarchy shared by all phcirc modules."""


class PhcircError(Exception):
    """Base class for all phcirc errors."""


# -- graph ------------------------------------------------------------------

class LoopEdge(PhcircError):
    """An edge has identical initial and terminal vertex."""


class GroundSetViolation(PhcircError):
    """Two grounded vertices lie in the same connected component."""


class NotAForest(PhcircError):
    """Edge set contains a cycle or is not a maximal acyclic subgraph."""


# -- ph_core ----------------------------------------------------------------

class ShapeMismatch(PhcircError):
    """Matrix or vector dimensions are inconsistent."""


class DegenerateSpan(PhcircError):
    """Numerical rank decision is ambiguous (no clear singular-value gap)."""


class LinkMismatch(PhcircError):
    """Interconnection was requested over link ports of different size."""


class InvalidDiracStructure(PhcircError):
    """A kernel pair (K, L) failed Dirac validation where one was required."""


class EvaluationFailure(PhcircError):
    """A user-supplied map could not be evaluated (raised or non-finite)."""


# -- components -------------------------------------------------------------

class NotAGradient(PhcircError):
    """Supplied map failed the gradient-field test."""


class NotAccretive(PhcircError):
    """Resistive map violates phi^T g(phi) >= 0; carries a witness sample."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class BadParams(PhcircError):
    """Device parameters outside their admissible domain."""


class NotLocallyPassive(PhcircError):
    """Transistor small-signal matrix at the origin is not negative definite."""


# -- netlist ----------------------------------------------------------------

class NetlistSyntaxError(PhcircError):
    """Netlist text could not be parsed; carries line and column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = f"line {line}" if line is not None else "?"
        if column is not None:
            loc += f", col {column}"
        super().__init__(f"{loc}: {message}")
        self.bare_message = message


class DuplicateName(PhcircError):
    """Two netlist components share a name."""


class UnknownDirective(PhcircError):
    """A dot-directive is not part of the supported grammar."""


# -- assembly ---------------------------------------------------------------

class NonInvertibleConstitutive(PhcircError):
    """A constitutive law required in inverted form could not be inverted."""


class AssemblyError(PhcircError):
    """Internal consistency check failed while assembling a circuit."""


# -- solver -----------------------------------------------------------------

class NewtonDivergence(PhcircError):
    """Newton iteration failed to converge; carries the iterate history."""

    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = iterates if iterates is not None else []


class SingularJacobian(PhcircError):
    """Jacobian is singular to working precision; carries a condition estimate."""

    def __init__(self, message, cond_estimate=None):
        super().__init__(message)
        self.cond_estimate = cond_estimate
