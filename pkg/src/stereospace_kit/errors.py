"""Exception hierarchy.

Every domain failure derives from :class:`StereoSpaceError` (itself a
``ValueError``) so callers and the CLI can separate domain errors from bugs.
"""


class StereoSpaceError(ValueError):
    pass


class ShapeMismatch(StereoSpaceError):
    pass


class NotRectified(StereoSpaceError):
    pass


class OutOfBounds(StereoSpaceError):
    pass


class ParallelRays(StereoSpaceError):
    pass


class ImageTooSmall(StereoSpaceError):
    pass


class EmptyMask(StereoSpaceError):
    pass


class InvalidRange(StereoSpaceError):
    pass


class DegenerateSchedule(StereoSpaceError):
    pass


class BadTimestep(StereoSpaceError):
    pass


class BadParams(StereoSpaceError):
    pass


class NoJointValid(StereoSpaceError):
    pass


class AllCandidatesInvalid(StereoSpaceError):
    pass


class BadTarget(StereoSpaceError):
    pass


class EmptySpec(StereoSpaceError):
    pass


class TooFewViews(StereoSpaceError):
    pass


class FormatError(StereoSpaceError):
    """Malformed PPM/PFM/STSP/camera file."""
