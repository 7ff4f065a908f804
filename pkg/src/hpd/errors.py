"""Error taxonomy shared across the package.

Three failure classes are distinguished so callers can tell bad setup
(ConfigError), a violated call contract (ContractError), and exceeded
capacity such as position-space or gap overflow (CapacityError) apart.
"""


class HpdError(Exception):
    """Base class for all package errors."""


class ConfigError(HpdError, ValueError):
    """Invalid static configuration (model shape, k_max, template)."""


class ContractError(HpdError, ValueError):
    """A call violated an operation's precondition."""


class CapacityError(HpdError, ValueError):
    """A bounded resource (gap size, position space) was exceeded."""
