from __future__ import annotations


class ZendoError(Exception):
    """Base class for errors raised by this package."""


class SceneSyntaxError(ZendoError, ValueError):
    pass


class SceneValidationError(ZendoError, ValueError):
    pass


class RuleSyntaxError(ZendoError, ValueError):
    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at token {position})"
        super().__init__(message)


class MutationNotApplicable(ZendoError):
    pass


class BudgetExceeded(ZendoError):
    pass


class DegenerateBeliefError(ZendoError):
    """All particle weights vanished; beliefs must be re-initialized."""


class InitializationError(ZendoError):
    pass


class ProposerError(ZendoError):
    pass


class UnsatisfiableRuleError(ZendoError):
    pass
