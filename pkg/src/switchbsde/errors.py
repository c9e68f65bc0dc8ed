"""Exception types shared across the package."""


class SwitchBSDEError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(SwitchBSDEError):
    """Malformed expression source. Carries position and the expected token."""

    def __init__(self, message, position, expected=None):
        self.position = position
        self.expected = expected
        super().__init__(f"{message} (at position {position})")


class InadmissibleVariable(SwitchBSDEError):
    """A variable that exists in the reserved alphabet but is not allowed in this slot."""

    def __init__(self, symbol, slot):
        self.symbol = symbol
        self.slot = slot
        super().__init__(f"variable '{symbol}' is not admissible in slot '{slot}'")


class UnboundVariable(SwitchBSDEError):
    """Evaluation environment is missing a variable that occurs in the expression."""

    def __init__(self, symbol):
        self.symbol = symbol
        super().__init__(f"no binding for variable '{symbol}'")


class DomainError(SwitchBSDEError):
    """Division by zero, or log/sqrt/power outside the real domain."""


class NonFiniteState(SwitchBSDEError):
    """A simulated path left the finite range; reports where."""

    def __init__(self, path, step):
        self.path = path
        self.step = step
        super().__init__(f"non-finite state on path {path} at step {step}")


class NonFinite(SwitchBSDEError):
    """A solver array picked up a NaN or infinity."""


class EmptyInput(SwitchBSDEError):
    """An operation received an empty sample it cannot act on."""


class DegenerateDesign(SwitchBSDEError):
    """Least squares failed even after ridge escalation."""


class PicardDivergence(SwitchBSDEError):
    """The per-step component iteration grew instead of contracting."""

    def __init__(self, step, component, history):
        self.step = step
        self.component = component
        self.history = history
        super().__init__(
            f"component sweep diverged at step {step} (component {component}); "
            f"change history {history}"
        )


class ProjectionCycle(SwitchBSDEError):
    """Obstacle projection failed to reach a fixed point; indicates a cost-cycle violation."""

    def __init__(self, step, witness):
        self.step = step
        self.witness = witness
        super().__init__(f"projection did not stabilise at step {step}; witness {witness}")


class DecoupledViolation(SwitchBSDEError):
    """An operation that requires drivers f_i(t, x) only was given a coupled driver."""

    def __init__(self, component, symbols):
        self.component = component
        self.symbols = symbols
        super().__init__(
            f"driver {component} references {sorted(symbols)}; lattice methods "
            "require drivers that depend on (t, x) only"
        )


class TooLarge(SwitchBSDEError):
    """Exhaustive enumeration bounds exceeded (m <= 3, K <= 5)."""


class ConfigError(SwitchBSDEError):
    """Bad run configuration. Message carries the offending key path."""
