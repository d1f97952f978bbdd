"""Exception hierarchy shared by every emoattr module."""


class EmoAttrError(Exception):
    """Base class for all library errors."""


class EmptySignal(EmoAttrError):
    """Signal or contour too short to analyse."""


class NumericalError(EmoAttrError):
    """A computation produced non-finite values."""


class InsufficientData(EmoAttrError):
    """Not enough samples or constraints for the requested operation."""


class InvalidConfig(EmoAttrError):
    pass


class InvalidInput(EmoAttrError):
    pass


class MissingModel(EmoAttrError):
    """No ranking model is available for a required emotion pair."""


class DegenerateModel(EmoAttrError):
    """Ranking model whose training scores collapse to a single value."""


class FormatError(EmoAttrError):
    """Malformed file. ``location`` names the file/line/field at fault."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)
