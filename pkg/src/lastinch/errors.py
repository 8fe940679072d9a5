"""Exception hierarchy shared by the library and the CLI.

Every class carries an ``exit_code`` so the CLI can map failures to distinct
process exit statuses without a lookup table of its own.
"""


class LastInchError(Exception):
    exit_code = 1


class DegenerateInput(LastInchError, ValueError):
    exit_code = 10


class SizeMismatch(LastInchError, ValueError):
    exit_code = 11


class EmptyCloud(LastInchError, ValueError):
    exit_code = 12


class MeshError(LastInchError, ValueError):
    exit_code = 13


class DegenerateExtent(LastInchError, ValueError):
    exit_code = 14


class InvalidDistribution(LastInchError, ValueError):
    exit_code = 15


class EmptyDatabase(LastInchError, ValueError):
    exit_code = 16


class EmptyScene(LastInchError, ValueError):
    exit_code = 17


class MissingAnchorImage(LastInchError, KeyError):
    exit_code = 18


class EmptyTrajectory(LastInchError, ValueError):
    exit_code = 19


class FrameChainError(LastInchError, ValueError):
    exit_code = 20


class NoFeasibleSubgoal(LastInchError, RuntimeError):
    exit_code = 21


class PathBlocked(LastInchError, RuntimeError):
    exit_code = 22


class InvalidGeometry(LastInchError, ValueError):
    exit_code = 23


class OutOfFrustum(LastInchError, ValueError):
    exit_code = 24


class FractionOutOfRange(LastInchError, ValueError):
    exit_code = 25


class ConfigError(LastInchError, ValueError):
    exit_code = 30


class MissingArtifact(LastInchError, FileNotFoundError):
    exit_code = 31
