import sys
from unittest.mock import patch

import numpy as np
import pytest
from django.conf import settings
from django.test import SimpleTestCase, override_settings
from rest_framework import serializers

from sclocalize.config import coerce, get_value, load_config
from sclocalize.documents import ArrayField, dump_json, format_errors, parse_document
from sclocalize.exceptions import ConfigurationError, SceneFormatError


class ConfigTests(SimpleTestCase):
    """Defaults from settings, overrides from a key-value file"""

    def test_defaults_without_file(self):
        config = load_config()
        self.assertEqual(config['loss.tau'], 1.0)
        self.assertEqual(config['refine.max_iters'], 100)

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            load_config('/nonexistent/scwls.env')

    def test_bad_value(self):
        with self.assertRaises(ConfigurationError):
            coerce('refine.max_iters', 'many', 100)

    @override_settings(SCWLS={'loss.tau': 3.0})
    def test_get_value_falls_back_to_settings(self):
        self.assertEqual(get_value({}, 'loss.tau'), 3.0)
        with self.assertRaises(ConfigurationError):
            get_value({}, 'loss.alpha')


class MatrixSerializer(serializers.Serializer):
    m = ArrayField(shape=(2, None))

    def create(self, validated_data):
        return validated_data['m']


def test_array_field_accepts_matching_shape():
    m = parse_document({'m': [[1, 2, 3], [4, 5, 6]]}, MatrixSerializer)
    assert m.dtype == np.float64
    assert m.shape == (2, 3)


def test_array_field_names_shape_problem():
    with pytest.raises(SceneFormatError, match=r'm: Expected shape 2xN, got 3x1'):
        parse_document({'m': [[1], [2], [3]]}, MatrixSerializer)


def test_array_field_rejects_non_finite():
    with pytest.raises(SceneFormatError, match='non-finite'):
        parse_document({'m': [[1.0, float('nan')], [0.0, 0.0]]}, MatrixSerializer)


def test_format_errors_flattens_nested_lists():
    errors = {'points': [{}, {'px': ['Bad.']}]}
    assert format_errors(errors) == 'points.1.px: Bad.'


def test_dump_json_ends_with_newline():
    assert dump_json({'a': 1}) == '{\n  "a": 1\n}\n'


def test_file_overrides_are_coerced(tmp_path):
    path = tmp_path / 'scwls.env'
    path.write_text('loss.tau=2.5\nrefine.max_iters=7\nfit.schedule=alternate\n')
    config = load_config(path)
    assert config['loss.tau'] == 2.5
    assert config['refine.max_iters'] == 7
    assert isinstance(config['refine.max_iters'], int)
    assert config['fit.schedule'] == 'alternate'
    assert config['loss.alpha'] == settings.SCWLS['loss.alpha']


def test_unknown_config_key(tmp_path):
    path = tmp_path / 'scwls.env'
    path.write_text('loss.tua=2\n')
    with pytest.raises(ConfigurationError, match='loss.tua'):
        load_config(path)


def test_manage_explains_missing_packages():
    import manage

    with patch.dict(sys.modules, {'evaluation.cli': None}):
        with pytest.raises(ImportError, match='requirements.txt'):
            manage.main()
