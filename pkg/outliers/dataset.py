"""
Long-format measurement data and the no-intercept design matrix.

Each row of the input is one measurement: which participant was measured,
by which evaluator, the repeat index k, the outcome Y_ik, the participant
covariates X_i and the measurement covariates Z_ik. Every participant is
measured by exactly one evaluator.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

# Column names of the canonical CSV written by export_csv
EXPORT_PARTICIPANT = 'participant'
EXPORT_EVALUATOR = 'evaluator'
EXPORT_REPEAT = 'repeat'
EXPORT_OUTCOME = 'outcome'

SPLIT_SEPARATOR = '|'


@dataclass(frozen=True)
class ColumnBinding:
    """Maps the roles of the pipeline onto CSV column names."""

    outcome: str
    participant: str
    evaluator: str
    covariates: tuple = ()
    categorical: tuple = ()
    repeat: str | None = None
    measurement_covariates: tuple = ()
    # Effect modifier: the same evaluator in different levels counts as different evaluators
    split_by: str | None = None

    @property
    def columns(self):
        columns = [self.participant, self.evaluator, self.outcome]
        columns += list(self.covariates)
        columns += list(self.measurement_covariates)
        if self.repeat:
            columns.append(self.repeat)
        if self.split_by:
            columns.append(self.split_by)
        # dict keeps the first occurrence and the declaration order
        return list(dict.fromkeys(columns))


class MeasurementRecord(NamedTuple):
    participant_id: str
    evaluator_id: str
    repeat_index: int
    outcome: float
    participant_covariates: tuple
    measurement_covariates: tuple


def _frozen(array):
    array = np.ascontiguousarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Validated measurements with dense internal indices.

    Rows are ordered by (participant index, repeat index). Participant and
    evaluator indices are positions in the lexicographically sorted tuples
    of original ids, which are kept for reporting.
    """

    participant_ids: tuple
    evaluator_ids: tuple
    participant: np.ndarray
    evaluator: np.ndarray
    repeat: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    measurement_covariates: np.ndarray
    covariate_names: tuple = ()
    measurement_covariate_names: tuple = ()
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ('participant', 'evaluator', 'repeat', 'outcome',
                     'covariates', 'measurement_covariates'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def __len__(self):
        return self.outcome.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.participant_ids == other.participant_ids
            and self.evaluator_ids == other.evaluator_ids
            and self.covariate_names == other.covariate_names
            and self.measurement_covariate_names == other.measurement_covariate_names
            and np.array_equal(self.participant, other.participant)
            and np.array_equal(self.evaluator, other.evaluator)
            and np.array_equal(self.repeat, other.repeat)
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.measurement_covariates, other.measurement_covariates)
        )

    __hash__ = None

    @property
    def M(self):
        return len(self.evaluator_ids)

    @property
    def N(self):
        return len(self.participant_ids)

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def q(self):
        return self.measurement_covariates.shape[1]

    @property
    def participant_evaluator(self):
        """Evaluator index of every participant."""
        evaluators = np.empty(self.N, dtype=np.int64)
        evaluators[self.participant] = self.evaluator
        return evaluators

    @property
    def n_j(self):
        return np.bincount(self.participant_evaluator, minlength=self.M)

    @property
    def t_i(self):
        return np.bincount(self.participant, minlength=self.N)

    @property
    def records(self):
        return [
            MeasurementRecord(
                participant_id=self.participant_ids[i],
                evaluator_id=self.evaluator_ids[j],
                repeat_index=int(k),
                outcome=float(y),
                participant_covariates=tuple(float(v) for v in x),
                measurement_covariates=tuple(float(v) for v in z),
            )
            for i, j, k, y, x, z in zip(
                self.participant, self.evaluator, self.repeat, self.outcome,
                self.covariates, self.measurement_covariates,
            )
        ]

    def column_binding(self):
        """The binding under which the CSV written by export_csv is read back."""
        return ColumnBinding(
            outcome=EXPORT_OUTCOME,
            participant=EXPORT_PARTICIPANT,
            evaluator=EXPORT_EVALUATOR,
            covariates=self.covariate_names,
            repeat=EXPORT_REPEAT,
            measurement_covariates=self.measurement_covariate_names,
        )

    def to_frame(self):
        frame = pd.DataFrame({
            EXPORT_PARTICIPANT: np.asarray(self.participant_ids, dtype=object)[self.participant],
            EXPORT_EVALUATOR: np.asarray(self.evaluator_ids, dtype=object)[self.evaluator],
            EXPORT_REPEAT: self.repeat,
            EXPORT_OUTCOME: self.outcome,
        })
        for position, name in enumerate(self.covariate_names):
            frame[name] = self.covariates[:, position]
        for position, name in enumerate(self.measurement_covariate_names):
            frame[name] = self.measurement_covariates[:, position]
        return frame


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """
    No-intercept design: M evaluator indicators, then the p participant
    covariates, then the q measurement covariates.
    """

    matrix: np.ndarray
    column_names: tuple
    n_evaluators: int

    def __post_init__(self):
        object.__setattr__(self, 'matrix', _frozen(self.matrix))

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def column_map(self):
        return {name: index for index, name in enumerate(self.column_names)}

    @property
    def evaluator_block(self):
        return self.matrix[:, :self.n_evaluators]


def _missing_columns(frame, binding):
    return [column for column in binding.columns if column not in frame.columns]


def _parse_float(value):
    # float() also takes "1_000" and non-ASCII digits
    if isinstance(value, str) and (not value.isascii() or '_' in value):
        return np.nan
    try:
        return float(value)
    except (TypeError, ValueError):
        return np.nan


# Python's float() parses exactly what repr() wrote, which keeps
# export_csv -> ingest_csv bit-identical.
def _numeric(frame, column):
    series = frame[column]
    if pd.api.types.is_numeric_dtype(series):
        values = series.to_numpy(dtype=float)
    else:
        values = np.array([_parse_float(value) for value in series], dtype=float)

    bad = ~np.isfinite(values)
    if bad.any():
        sample = series[bad].astype(str).head(3).tolist()
        raise ValidationError(f"Non-numeric values in column '{column}': {', '.join(sample)}")
    return values


# Expands the declared covariates into numeric columns. Categorical columns
# become reference-coded dummies named "<column>[<level>]", the reference
# being the first level in sorted order.
def _expand(frame, columns, categorical):
    names, blocks = [], []
    for column in columns:
        if column in categorical:
            values = frame[column].astype(str).to_numpy()
            levels = sorted(set(values))
            for level in levels[1:]:
                names.append(f"{column}[{level}]")
                blocks.append((values == level).astype(float))
        else:
            names.append(column)
            blocks.append(_numeric(frame, column))

    if blocks:
        matrix = np.column_stack(blocks)
    else:
        matrix = np.empty((len(frame), 0))
    return tuple(names), matrix


def load_frame(frame, binding, source=None):
    """
    Validates a long-format data frame of strings and builds a Dataset.

    Raises:
        ValidationError: missing column, missing or non-numeric values,
            participants assigned to several evaluators, participant
            covariates varying across a participant's records, repeated
            repeat indices, or no rows at all.
    """
    missing = _missing_columns(frame, binding)
    if missing:
        raise ValidationError(f"Missing column(s): {', '.join(missing)}")

    if len(frame) == 0:
        raise ValidationError("The input contains no measurements.")

    unknown = [column for column in binding.categorical
               if column not in binding.covariates and column not in binding.measurement_covariates]
    if unknown:
        raise ValidationError(f"Categorical column(s) not declared as covariates: {', '.join(unknown)}")

    incomplete = [column for column in binding.columns if frame[column].isna().any()]
    if incomplete:
        raise ValidationError(f"Missing values in column(s): {', '.join(incomplete)}")

    frame = frame.reset_index(drop=True)
    participant_ids = frame[binding.participant].astype(str).to_numpy()
    evaluator_ids = frame[binding.evaluator].astype(str).to_numpy()
    if binding.split_by:
        levels = frame[binding.split_by].astype(str).to_numpy()
        evaluator_ids = np.array(
            [f"{evaluator}{SPLIT_SEPARATOR}{level}" for evaluator, level in zip(evaluator_ids, levels)],
            dtype=object,
        )

    assignment = pd.DataFrame({'participant': participant_ids, 'evaluator': evaluator_ids})
    counts = assignment.groupby('participant', sort=True)['evaluator'].nunique()
    shared = counts[counts > 1].index.tolist()
    if shared:
        raise ValidationError(
            f"Participant assigned to multiple evaluators: {', '.join(map(str, shared[:5]))}"
        )

    outcome = _numeric(frame, binding.outcome)
    categorical = set(binding.categorical)
    covariate_names, covariates = _expand(frame, binding.covariates, categorical)
    measurement_names, measurement_covariates = _expand(
        frame, binding.measurement_covariates, categorical
    )

    if covariates.shape[1]:
        spread = pd.DataFrame(covariates).groupby(participant_ids).nunique()
        varying = spread.index[(spread > 1).any(axis=1)].tolist()
        if varying:
            raise ValidationError(
                f"Participant covariates differ across records of participant(s): "
                f"{', '.join(map(str, varying[:5]))}"
            )

    if binding.repeat:
        repeat = _numeric(frame, binding.repeat)
        if np.any(repeat < 1) or np.any(repeat != np.floor(repeat)):
            raise ValidationError(f"Repeat indices in column '{binding.repeat}' must be integers >= 1.")
        repeat = repeat.astype(np.int64)
    else:
        repeat = assignment.groupby('participant', sort=False).cumcount().to_numpy() + 1

    keys = pd.DataFrame({'participant': participant_ids, 'repeat': repeat})
    duplicated = keys.duplicated()
    if duplicated.any():
        sample = keys.loc[duplicated, 'participant'].head(3).tolist()
        raise ValidationError(f"Repeated measurement index for participant(s): {', '.join(sample)}")

    participant_levels, participant = np.unique(participant_ids.astype(str), return_inverse=True)
    evaluator_levels, evaluator = np.unique(evaluator_ids.astype(str), return_inverse=True)

    order = np.lexsort((repeat, participant))

    dataset = Dataset(
        participant_ids=tuple(str(value) for value in participant_levels),
        evaluator_ids=tuple(str(value) for value in evaluator_levels),
        participant=participant[order].astype(np.int64),
        evaluator=evaluator[order].astype(np.int64),
        repeat=np.asarray(repeat)[order].astype(np.int64),
        outcome=outcome[order],
        covariates=covariates[order],
        measurement_covariates=measurement_covariates[order],
        covariate_names=covariate_names,
        measurement_covariate_names=measurement_names,
        source=source,
    )
    logger.debug(f"Loaded {len(dataset)} measurements: N={dataset.N}, M={dataset.M}, "
                 f"p={dataset.p}, q={dataset.q}")
    return dataset


def ingest_csv(path, binding):
    """
    Reads a UTF-8 CSV with a header row into a validated Dataset.

    Raises:
        ValidationError: the file is missing or empty, or any of the
            conditions listed for load_frame.
    """
    if not os.path.isfile(path):
        raise ValidationError(f"Input file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, encoding='utf-8', skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"Input file is empty: {path}")
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise ValidationError(f"Could not parse {path}: {e}")

    frame.columns = [str(column).strip() for column in frame.columns]
    dataset = load_frame(frame, binding, source=str(path))
    logger.info(f"Ingested {path}: {len(dataset)} rows, N={dataset.N}, M={dataset.M}")
    return dataset


def export_csv(dataset, path):
    """Writes the canonical long CSV; read it back with dataset.column_binding()."""
    dataset.to_frame().to_csv(path, index=False)
    return path


def build_design(dataset):
    """
    One row per measurement; exactly one 1 among the first M columns.
    """
    n = len(dataset)
    indicators = np.zeros((n, dataset.M))
    indicators[np.arange(n), dataset.evaluator] = 1.0

    matrix = np.hstack([indicators, dataset.covariates, dataset.measurement_covariates])
    names = tuple(f"evaluator[{evaluator_id}]" for evaluator_id in dataset.evaluator_ids)
    names += dataset.covariate_names + dataset.measurement_covariate_names

    return DesignMatrix(matrix=matrix, column_names=names, n_evaluators=dataset.M)
