import os

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from outliers.dataset import ColumnBinding, build_design, export_csv, ingest_csv, load_frame

from .mixins import OutputDirMixin, audiology_frame

EARS = ColumnBinding(outcome='y', participant='pid', evaluator='aud', covariates=('age',))


def ears_frame():
    return pd.DataFrame({
        'pid': ['p1', 'p1', 'p2', 'p2'],
        'aud': ['a', 'a', 'b', 'b'],
        'age': ['50', '50', '61.5', '61.5'],
        'y': ['20', '25.5', '31', '29'],
    })


class LoadFrameTests(SimpleTestCase):
    def test_two_participants_two_ears(self):
        dataset = load_frame(ears_frame(), EARS)
        self.assertEqual(dataset.N, 2)
        self.assertEqual(dataset.M, 2)
        self.assertEqual(dataset.t_i.tolist(), [2, 2])
        self.assertEqual(dataset.n_j.tolist(), [1, 1])
        self.assertEqual(dataset.repeat.tolist(), [1, 2, 1, 2])
        self.assertEqual(dataset.evaluator_ids, ('a', 'b'))

    def test_records_keep_original_ids(self):
        records = load_frame(ears_frame(), EARS).records
        self.assertEqual(records[0].participant_id, 'p1')
        self.assertEqual(records[0].evaluator_id, 'a')
        self.assertEqual(records[0].participant_covariates, (50.0,))
        self.assertEqual(records[3].outcome, 29.0)

    def test_participant_with_two_evaluators(self):
        frame = ears_frame()
        frame['pid'] = ['p7', 'p7', 'p8', 'p8']
        frame['aud'] = ['a', 'b', 'b', 'b']
        with self.assertRaisesMessage(ValidationError, 'Participant assigned to multiple evaluators'):
            load_frame(frame, EARS)

    def test_missing_column(self):
        frame = ears_frame().drop(columns=['age'])
        with self.assertRaisesMessage(ValidationError, 'Missing column(s): age'):
            load_frame(frame, EARS)

    def test_non_numeric_outcome(self):
        frame = ears_frame()
        frame.loc[1, 'y'] = 'loud'
        with self.assertRaisesMessage(ValidationError, "Non-numeric values in column 'y'"):
            load_frame(frame, EARS)

    def test_digit_grouping_and_foreign_digits_rejected(self):
        for text in ('1_000', '\u0661\u0662'):
            frame = ears_frame()
            frame.loc[1, 'y'] = text
            with self.assertRaisesMessage(ValidationError, "Non-numeric values in column 'y'"):
                load_frame(frame, EARS)

    def test_missing_value(self):
        frame = ears_frame()
        frame.loc[2, 'y'] = None
        with self.assertRaisesMessage(ValidationError, 'Missing values in column(s): y'):
            load_frame(frame, EARS)

    def test_covariate_varies_within_participant(self):
        frame = ears_frame()
        frame.loc[1, 'age'] = '51'
        with self.assertRaisesMessage(ValidationError, 'Participant covariates differ'):
            load_frame(frame, EARS)

    def test_duplicate_repeat_index(self):
        frame = ears_frame()
        frame['visit'] = ['1', '1', '1', '2']
        binding = ColumnBinding(outcome='y', participant='pid', evaluator='aud', repeat='visit')
        with self.assertRaisesMessage(ValidationError, 'Repeated measurement index'):
            load_frame(frame, binding)

    def test_empty_frame(self):
        with self.assertRaisesMessage(ValidationError, 'no measurements'):
            load_frame(ears_frame().iloc[0:0], EARS)

    def test_categorical_dummies(self):
        frame = audiology_frame(M=3, n=10)
        binding = ColumnBinding(outcome='threshold', participant='participant_id', evaluator='audiologist',
                                covariates=('age', 'status'), categorical=('status',))
        dataset = load_frame(frame.astype(str), binding)
        # 'a little trouble' sorts first and is the reference level
        self.assertEqual(dataset.covariate_names, ('age', 'status[excellent]', 'status[very good]'))
        self.assertTrue(set(np.unique(dataset.covariates[:, 1:])) <= {0.0, 1.0})

    def test_undeclared_categorical(self):
        binding = ColumnBinding(outcome='y', participant='pid', evaluator='aud', categorical=('age',))
        with self.assertRaisesMessage(ValidationError, 'not declared as covariates'):
            load_frame(ears_frame(), binding)

    def test_split_by_effect_modifier(self):
        frame = pd.DataFrame({
            'pid': ['p1', 'p2', 'p3', 'p4'],
            'aud': ['a', 'a', 'b', 'b'],
            'site': ['north', 'south', 'north', 'north'],
            'y': ['1', '2', '3', '4'],
        })
        binding = ColumnBinding(outcome='y', participant='pid', evaluator='aud', split_by='site')
        dataset = load_frame(frame, binding)
        self.assertEqual(dataset.evaluator_ids, ('a|north', 'a|south', 'b|north'))
        self.assertEqual(dataset.n_j.tolist(), [1, 1, 2])


class DesignTests(SimpleTestCase):
    def test_design_shape_and_one_hot(self):
        frame = pd.DataFrame({
            'pid': ['p1', 'p2', 'p3'],
            'aud': ['a', 'b', 'a'],
            'x': ['0.5', '1.5', '-2'],
            'y': ['1', '2', '3'],
        })
        binding = ColumnBinding(outcome='y', participant='pid', evaluator='aud', covariates=('x',))
        design = build_design(load_frame(frame, binding))

        self.assertEqual(design.shape, (3, 3))
        np.testing.assert_array_equal(design.matrix, [[1, 0, 0.5], [0, 1, 1.5], [1, 0, -2]])
        np.testing.assert_array_equal(design.evaluator_block.sum(axis=1), np.ones(3))
        self.assertEqual(design.column_names, ('evaluator[a]', 'evaluator[b]', 'x'))
        self.assertEqual(design.column_map['x'], 2)

    def test_no_measurement_block(self):
        design = build_design(load_frame(ears_frame(), EARS))
        self.assertEqual(design.shape, (4, 3))

    def test_column_sums_match_n_j(self):
        frame = audiology_frame(M=4, n=7)
        binding = ColumnBinding(outcome='threshold', participant='participant_id', evaluator='audiologist',
                                covariates=('age',))
        dataset = load_frame(frame.astype(str), binding)
        design = build_design(dataset)
        np.testing.assert_array_equal(design.evaluator_block.sum(axis=0), dataset.n_j)


class IngestTests(OutputDirMixin):
    def binding(self):
        return ColumnBinding(outcome='threshold', participant='participant_id', evaluator='audiologist',
                             covariates=('age', 'status'), categorical=('status', 'ear'),
                             measurement_covariates=('ear',), repeat='visit')

    def test_ingest_paired_fixture(self):
        dataset = ingest_csv(self.paired_csv, self.binding())
        self.assertEqual(dataset.M, 12)
        self.assertEqual(dataset.N, 360)
        self.assertTrue(np.all(dataset.t_i == 2))
        self.assertEqual(dataset.measurement_covariate_names, ('ear[right]',))
        self.assertEqual(dataset.source, self.paired_csv)

    def test_fixture_numbers_are_plain_floats(self):
        frame = pd.read_csv(self.paired_csv, dtype=str)
        for column in ('age', 'threshold'):
            self.assertFalse(frame[column].str.contains('np').any(), column)
            self.assertTrue(np.isfinite(frame[column].astype(float)).all())

    def test_missing_file(self):
        with self.assertRaisesMessage(ValidationError, 'Input file not found'):
            ingest_csv(self.path('nope.csv'), self.binding())

    def test_empty_file(self):
        path = self.path('empty.csv')
        open(path, 'w').close()
        with self.assertRaisesMessage(ValidationError, 'Input file is empty'):
            ingest_csv(path, self.binding())

    def test_export_round_trip(self):
        dataset = ingest_csv(self.paired_csv, self.binding())
        path = export_csv(dataset, self.path('export.csv'))
        self.assertTrue(os.path.isfile(path))

        again = ingest_csv(path, dataset.column_binding())
        self.assertEqual(again, dataset)
