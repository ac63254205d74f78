"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Arguments violate a documented precondition."""


class UnknownSymbolError(KeyError):
    """A symbol, speaker or utterance id is not present in the lookup table."""


class DataError(RuntimeError):
    """Corpus data is missing, unreadable or insufficient."""


class MissingArtifactError(FileNotFoundError):
    """An upstream pipeline artifact does not exist yet."""

    def __init__(self, path, producer):
        self.path = str(path)
        self.producer = producer
        super().__init__(f"{self.path} not found; run `unitts {producer}` first")
