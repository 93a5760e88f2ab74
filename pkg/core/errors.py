"""
Exception hierarchy for the Lindblad Learner.
"""


class LindbladError(Exception):
    """Base class for every error raised by the library"""
    pass


class SpecError(LindbladError):
    """Invalid model spec, connection graph or parameter shape"""
    pass


class DegenerateParameterError(LindbladError):
    """Parameters that do not define a valid object (e.g. an all-zero state factor)"""
    pass


class NotNestedError(LindbladError):
    """A warm start was requested between models that are not nested"""
    pass


class SolverError(LindbladError):
    """The propagator exceeded its step budget or produced non-finite states"""
    pass


class PhysicalityError(SolverError):
    """A propagated state violates trace or positivity beyond tolerance"""
    pass


class LikelihoodError(LindbladError):
    """Zero probability for an observed outcome or a non-finite likelihood"""
    pass


class FitAbortedError(LindbladError):
    """The optimizer hit a non-finite likelihood or gradient"""

    def __init__(self, message, params=None, step=None):
        super().__init__(message)
        self.params = params
        self.step = step


class DatasetError(LindbladError):
    """Dataset or plan violates its schema or count invariants"""
    pass


class SelectionError(LindbladError):
    """Incomplete lattice or invalid nested comparison"""
    pass
