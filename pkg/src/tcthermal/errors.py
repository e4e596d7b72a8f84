"""Exception types raised across the pipeline."""


class TcThermalError(Exception):
    """Base class for all package errors."""


class DegenerateTrack(TcThermalError):
    pass


class InsufficientCoverage(TcThermalError):
    """Profile samples do not span the gridding interval."""


class InsufficientData(TcThermalError):
    pass


class IllConditioned(TcThermalError):
    pass


class NoValidCell(TcThermalError):
    """No fitted grid cell could be found near a location."""


class NonPositiveDefinite(TcThermalError):
    pass


class OptimizerFailed(TcThermalError):
    pass


class SingularSystem(TcThermalError):
    pass


class LeverageOne(TcThermalError):
    """A hat-matrix diagonal entry is numerically one."""


class EmptyBand(TcThermalError):
    pass


class StageError(TcThermalError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
