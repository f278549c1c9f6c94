"""Exception types shared across the package."""


class BlockstreamError(Exception):
    """Base class for all package errors."""


class ShapeError(BlockstreamError, ValueError):
    """Operands have incompatible shapes."""


class MaskError(BlockstreamError, ValueError):
    """An attention mask is structurally invalid (e.g. a fully masked query row)."""


class ContractError(BlockstreamError, ValueError):
    """A caller violated a documented precondition."""


class EmptyInputError(ContractError):
    """An operation received an empty stream where at least one frame is required."""


class ParseError(BlockstreamError, ValueError):
    """A serialized file is malformed."""
