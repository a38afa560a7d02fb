"""Exception hierarchy shared across the package."""


class PanelEnsembleError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PanelEnsembleError):
    pass


class IncompletePanel(PanelEnsembleError):
    pass


class DuplicateCell(PanelEnsembleError):
    pass


class DomainError(PanelEnsembleError):
    """A transform was applied to values outside its domain."""


class InsufficientHistory(PanelEnsembleError):
    pass


class InsufficientUnits(PanelEnsembleError):
    pass


class NumericalError(PanelEnsembleError):
    """Non-finite input reached a numerical routine."""


class MixingError(PanelEnsembleError):
    pass


class FoldError(PanelEnsembleError):
    pass


class DegenerateMask(PanelEnsembleError):
    pass


class ConfigError(PanelEnsembleError):
    pass


class EnsembleError(PanelEnsembleError):
    pass
