"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a format or domain invariant.

    The command-line front end maps this to exit code 2.
    """
