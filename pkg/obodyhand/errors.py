class ObodyhandError(Exception):
    """
    Base error. category is the machine-parsable tag printed by the command line on failure.
    """
    category = "error"


class ValidationError(ObodyhandError, ValueError):
    category = "validation"


class UnsupportedVersionError(ObodyhandError):
    category = "version"

    def __init__(self, version):
        super().__init__("unsupported version %s" % version)
        self.version = version


class NumericError(ObodyhandError, ArithmeticError):
    category = "numeric"


class ConfigurationError(ObodyhandError):
    category = "configuration"


class GradCheckFailure(ObodyhandError):
    category = "gradcheck"
