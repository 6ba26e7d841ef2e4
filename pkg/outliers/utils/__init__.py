import math

import numpy as np
from django.core.exceptions import ValidationError

# Exit codes of the management commands
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_SIMULATION = 4

# The first-stage estimators
ENGINES = {
    'ols': 'Ordinary least squares (one measurement per participant)',
    'gee': 'Generalized estimating equations with sandwich covariance',
}

# Working correlation structures understood by the GEE solver
CORRELATIONS = {
    'independent': 'Corr(Y_ik1, Y_ik2) = 0',
    'exchangeable': 'Corr(Y_ik1, Y_ik2) = alpha',
    'unstructured': 'Corr(Y_ik1, Y_ik2) = alpha_k1k2',
}

# Which mean every evaluator is compared against
CONTRASTS = {
    'untruncated': 'Mean of all evaluator effects',
    'truncated': 'Truncated mean of the evaluator effects',
}

# How many of the weakest rejections the FDR-based adjustment drops
ADJUST_RULES = {
    'prose': 'Remove round(Q*k) rejections',
    'algorithm': 'Remove round(Q*k) + 1 rejections',
}

# Unified significance level of the comparator tests
FIXED_ALPHA = 0.05

# Rounds x to the nearest integer, halves go up.
# Note: math.ceil is not what the adjustment rule means by its brackets.
def round_half_up(x):
    return int(math.floor(x + 0.5))

# Parses "start:stop:step" into the list of grid points, stop included.
# Points are rounded to 10 decimals so that 0.1 + 0.01 * k lands on 0.11 etc.
def parse_grid(text):
    try:
        start, stop, step = (float(part) for part in text.split(':'))
    except ValueError:
        raise ValueError(f"Invalid grid '{text}', expected start:stop:step.")

    if step <= 0 or stop < start:
        raise ValueError(f"Invalid grid '{text}', expected start <= stop and step > 0.")

    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]

def trim_count(M, delta):
    """
    Number of order statistics trimmed from each tail, [M * delta].
    """
    if not 0 <= delta < 0.5:
        raise ValidationError(f"delta must lie in [0, 0.5), got {delta}.")
    return int(math.floor(M * delta + 1e-12))

def as_vector(values, name='values'):
    vector = np.asarray(values, dtype=float)
    if vector.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional.")
    return vector
