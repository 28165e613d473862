"""Exception types shared across the package."""


class PhconvError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(PhconvError):
    """A physical parameter or gain is outside its admissible range."""


class StructureError(PhconvError):
    """Structure matrices have inconsistent dimensions."""


class ScenarioError(PhconvError):
    """A scenario definition is invalid or a profile was sampled out of range."""


class ProfileError(PhconvError):
    """A load or grid profile file violates its format contract."""


class GridCollapseError(PhconvError):
    """The AC node voltage fell below the reference-generation guard."""


class SingularityError(PhconvError):
    """A division guard (DC voltage) was violated in a strict-mode evaluation."""


class ConfigError(PhconvError):
    """A configuration document is malformed or violates a constraint."""


class ComparisonError(PhconvError):
    """Two runs cannot be compared (different scenarios)."""


class AuditError(PhconvError):
    """A trajectory is too short or otherwise unusable for a check."""
