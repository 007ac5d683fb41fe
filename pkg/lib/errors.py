class RcpaError(Exception):

    """Base class for errors raised by the toolkit.

    `field` names the offending input (a flag, a file key or an argument)
    when there is one.
    """

    def __init__(self, message, field=None):
        super(RcpaError, self).__init__(message)
        self.message = message
        self.field = field

    def as_record(self):
        return {
            'code': self.code,
            'message': self.message,
            'field': self.field
        }


class ValidationError(RcpaError, ValueError):
    code = 'validation'


class NumericalError(RcpaError, RuntimeError):
    code = 'numerical'


class InfeasibleError(NumericalError):

    """The pattern constraints admit no solution.

    `constraint` describes the most-violated constraint found by the phase-I
    problem and `slack` is the common amount every bound would need to be
    relaxed by (linear magnitude).
    """

    def __init__(self, message, constraint=None, slack=None, field=None):
        super(InfeasibleError, self).__init__(message, field=field)
        self.constraint = constraint
        self.slack = slack
