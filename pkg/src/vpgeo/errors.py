"""Exception types shared across the package."""


class VpgeoError(Exception):
    """Base class for all package errors."""


# -- tensor / autodiff ------------------------------------------------------

class ShapeMismatch(VpgeoError):
    pass


class NonFiniteValue(VpgeoError):
    pass


class NotScalar(VpgeoError):
    pass


class StaleTape(VpgeoError):
    pass


class MissingGrad(VpgeoError):
    pass


# -- geometry ---------------------------------------------------------------

class ImageTooSmall(VpgeoError):
    pass


class NoLines(VpgeoError):
    pass


class EmptyList(VpgeoError):
    pass


class ZeroDimension(VpgeoError):
    pass


class TooShort(VpgeoError):
    pass


# -- synthetic world --------------------------------------------------------

class CameraOutsideScene(VpgeoError):
    pass


class IoError(VpgeoError):
    pass


# -- training ---------------------------------------------------------------

class EmptyDataset(VpgeoError):
    pass


class LabelError(VpgeoError):
    pass


class FrozenHeadMissing(VpgeoError):
    pass


# -- evaluation -------------------------------------------------------------

class SingleClass(VpgeoError):
    pass
