"""Exception hierarchy shared by every hypersyn module."""


class HypersynError(Exception):
    """Base class for all protocol and library errors."""


# smt
class KeyExists(HypersynError):
    pass


class KeyAbsent(HypersynError):
    pass


class RemoteUnavailable(HypersynError):
    pass


class InconsistentRemote(HypersynError):
    """A remote served subtree data that does not hash to the digest it committed to."""


# exchange / arbitrage
class Overflow(HypersynError):
    pass


class InsufficientDepth(HypersynError):
    pass


class StaleReserves(HypersynError):
    pass


class Unprofitable(HypersynError):
    """Integer execution of a cycle would lose credit; nothing was applied."""


# node
class NoEdge(HypersynError):
    pass


class EdgeExists(HypersynError):
    pass


class SyncFailed(HypersynError):
    pass


class CounterpartyTimeout(HypersynError):
    pass


class PeerUnreachable(HypersynError):
    pass


class InvalidSignature(HypersynError):
    pass


class InvalidProof(HypersynError):
    pass


class NoCommonPeer(HypersynError):
    pass


class Refused(HypersynError):
    pass


# dht
class StaleCounter(HypersynError):
    pass


class InvalidEvidence(HypersynError):
    pass


class StaleEvidence(HypersynError):
    pass


class NotFound(HypersynError):
    pass


# sim
class ConfigError(HypersynError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
