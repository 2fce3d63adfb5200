"""
Errors raised by kgrlab. Every class derives from ``KGRError`` and from the
closest builtin, so ``except ValueError`` keeps working for callers that do
not care about the specific failure.
"""

__all__ = [
    'KGRError', 'MalformedLine', 'UnknownCategory', 'UnknownEntity',
    'UnknownRelation', 'SchemaViolation', 'DuplicateRelationDecl',
    'InvalidSpec', 'Cyclic', 'Disconnected', 'MultipleTargets',
    'SchemaInconsistent', 'InvalidQuery', 'UnknownAnchor', 'Unsatisfiable',
    'IncompatibleTarget', 'InvalidDim', 'EmptyInput', 'DimMismatch',
    'ShapeMismatch', 'EmptyTrainSet', 'EmptyResults', 'InvalidK',
    'MismatchedSets', 'MissingTargetAnswer', 'EmptyQStar', 'MissingGoal',
    'NoExpansion', 'InvalidConfig']


class KGRError(Exception):
    """Base class of every kgrlab error."""


class MalformedLine(KGRError, ValueError):
    def __init__(self, line_no, line='', source='input'):
        self.line_no = line_no
        self.line = line
        super().__init__(f'Malformed line {line_no} in {source}: {line!r}')


class UnknownCategory(KGRError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f'Unknown category for `{name}`')


class UnknownEntity(KGRError, KeyError):
    def __init__(self, entity):
        self.entity = entity
        super().__init__(f'Unknown entity `{entity}`')


class UnknownRelation(KGRError, KeyError):
    def __init__(self, relation):
        self.relation = relation
        super().__init__(f'Unknown relation `{relation}`')


class SchemaViolation(KGRError, ValueError):
    def __init__(self, fact, detail=''):
        self.fact = fact
        msg = f'Fact {fact} violates the relation schema'
        if detail:
            msg += f' ({detail})'
        super().__init__(msg)


class DuplicateRelationDecl(KGRError, ValueError):
    def __init__(self, name):
        self.name = name
        super().__init__(f'Relation `{name}` declared more than once')


class InvalidSpec(KGRError, ValueError):
    pass


class InvalidQuery(KGRError, ValueError):
    pass


class Cyclic(InvalidQuery):
    pass


class Disconnected(InvalidQuery):
    pass


class MultipleTargets(InvalidQuery):
    pass


class SchemaInconsistent(InvalidQuery):
    pass


class UnknownAnchor(KGRError, KeyError):
    def __init__(self, entity):
        self.entity = entity
        super().__init__(f'Anchor entity `{entity}` is not in the graph')


class Unsatisfiable(KGRError, ValueError):
    pass


class IncompatibleTarget(KGRError, ValueError):
    pass


class InvalidDim(KGRError, ValueError):
    pass


class EmptyInput(KGRError, ValueError):
    pass


class DimMismatch(KGRError, ValueError):
    pass


class ShapeMismatch(KGRError, ValueError):
    pass


class EmptyTrainSet(KGRError, ValueError):
    pass


class EmptyResults(KGRError, ValueError):
    pass


class InvalidK(KGRError, ValueError):
    pass


class MismatchedSets(KGRError, ValueError):
    pass


class MissingTargetAnswer(KGRError, ValueError):
    pass


class EmptyQStar(KGRError, ValueError):
    pass


class MissingGoal(KGRError, ValueError):
    pass


class NoExpansion(KGRError, ValueError):
    pass


class InvalidConfig(KGRError, ValueError):
    pass
