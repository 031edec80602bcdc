"""Exception types raised across the engine.

Every domain error carries a short ``code`` string so the CLI can echo it
and map it onto an exit status.
"""
from __future__ import annotations


class CfWorldError(Exception):
    code = "DomainError"


class InvalidRoom(CfWorldError):
    code = "InvalidRoom"


class InvalidGeometry(CfWorldError):
    code = "InvalidGeometry"


class TargetNotFound(CfWorldError, KeyError):
    code = "TargetNotFound"

    def __str__(self) -> str:
        return Exception.__str__(self)


class TargetStructural(CfWorldError):
    code = "TargetStructural"


class PlacementExhausted(CfWorldError):
    code = "PlacementExhausted"


class InterventionRejected(CfWorldError):
    """Raised when an intervention fails its validity check.

    ``report`` is the :class:`~cfworld.intervention.ValidityReport` that
    caused the rejection.
    """

    code = "InterventionRejected"

    def __init__(self, report):
        self.report = report
        codes = ", ".join(v.code for v in report.violations)
        super().__init__(f"intervention rejected: {codes}")


class UnsupportedAfterEdit(CfWorldError):
    code = "UnsupportedAfterEdit"


class InvalidCamera(CfWorldError):
    code = "InvalidCamera"


class CameraOutsideRoom(CfWorldError):
    code = "CameraOutsideRoom"


class IncompleteLayerSet(CfWorldError):
    code = "IncompleteLayerSet"


class NotARemoval(CfWorldError):
    code = "NotARemoval"


class BaseCameraNotFound(CfWorldError):
    code = "BaseCameraNotFound"


class DegenerateSplit(CfWorldError):
    code = "DegenerateSplit"


class DimensionMismatch(CfWorldError, ValueError):
    code = "DimensionMismatch"


class TooSmall(CfWorldError, ValueError):
    code = "TooSmall"


class ImageFormatError(CfWorldError, ValueError):
    code = "ImageFormatError"
