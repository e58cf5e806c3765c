"""Exception types.  Everything raised on purpose derives from SegConsistError."""


class SegConsistError(Exception):
    pass


class PreconditionError(SegConsistError, ValueError):
    """Inputs violate an operation's precondition (CLI exit code 2)."""


class OutOfBounds(PreconditionError):
    pass


class ShapeMismatch(PreconditionError):
    pass


class ImageTooSmall(PreconditionError):
    pass


class PatchTooLarge(PreconditionError):
    pass


class NoOverlap(PreconditionError):
    pass


class EmptyOverlap(PreconditionError):
    pass


class EmptyMask(PreconditionError):
    pass


class EmptyInput(PreconditionError):
    pass


class EmptyDataset(PreconditionError):
    pass


class NothingLeft(PreconditionError):
    pass


class BadStd(PreconditionError):
    pass


class BadOffset(PreconditionError):
    pass


class IoFailure(SegConsistError, OSError):
    pass


class ZeroGradient(SegConsistError, RuntimeError):
    """The attack direction vanished while target pixels remain.

    ``result`` holds the partial :class:`~segconsist.attacks.AdvResult`.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SelfAttackFailed(SegConsistError, RuntimeError):
    pass
