"""Exception hierarchy shared by all modules."""


class PDCovidNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PDCovidNetError, ValueError):
    pass


class AxisError(ShapeError):
    pass


class DomainError(PDCovidNetError, ValueError):
    pass


class NumericError(PDCovidNetError, ArithmeticError):
    pass


class TapeError(PDCovidNetError, RuntimeError):
    pass


class BuildError(PDCovidNetError, ValueError):
    pass


class SplitError(PDCovidNetError, ValueError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ContractError(PDCovidNetError, ValueError):
    pass


class ConfigError(PDCovidNetError, ValueError):
    pass


class DecodeError(PDCovidNetError, OSError):
    pass


class FormatError(DecodeError):
    pass


class CorruptionError(PDCovidNetError, ValueError):
    """Weight file failed structural or CRC validation."""


class IncompatibleWeightsError(PDCovidNetError, ValueError):
    """Weight file does not match the target model's layers."""
