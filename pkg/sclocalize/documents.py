import json
import logging
from pathlib import Path
from typing import Any, Type

import numpy as np
from rest_framework import serializers

from sclocalize.exceptions import PipelineError, SceneFormatError

logger = logging.getLogger(__name__)


class ArrayField(serializers.Field):
    """Nested JSON lists <-> float64 numpy array of a fixed shape (None = any length)."""

    default_error_messages = {
        'invalid': 'Expected a numeric array.',
        'shape': 'Expected shape {expected}, got {actual}.',
        'non_finite': 'Array contains non-finite values.',
    }

    def __init__(self, shape, dtype=np.float64, **kwargs):
        self.shape = tuple(shape)
        self.dtype = dtype
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        try:
            array = np.asarray(data, dtype=self.dtype)
        except (TypeError, ValueError):
            self.fail('invalid')
        if array.ndim != len(self.shape) or any(
            want is not None and want != got for want, got in zip(self.shape, array.shape)
        ):
            self.fail('shape', expected=self._shape_text(self.shape), actual=self._shape_text(array.shape))
        if array.dtype.kind == 'f' and not np.all(np.isfinite(array)):
            self.fail('non_finite')
        return array

    def to_representation(self, value):
        return np.asarray(value, dtype=self.dtype).tolist()

    @staticmethod
    def _shape_text(shape):
        return 'x'.join('N' if dim is None else str(dim) for dim in shape)


def format_errors(errors, prefix='') -> str:
    """Flatten DRF's nested error dict into 'field.sub: message' fragments."""
    if isinstance(errors, dict):
        parts = [format_errors(value, f'{prefix}{key}.') for key, value in errors.items()]
    elif isinstance(errors, list) and errors and all(isinstance(e, (dict, list)) for e in errors):
        parts = [format_errors(value, f'{prefix}{index}.') for index, value in enumerate(errors) if value]
    else:
        messages = errors if isinstance(errors, list) else [errors]
        return f"{prefix.rstrip('.') or 'document'}: {' '.join(str(m) for m in messages)}"
    return '; '.join(part for part in parts if part)


def load_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise SceneFormatError(f"Cannot read {path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e


def parse_document(data: Any, serializer_class: Type[serializers.Serializer], source='document', **kwargs):
    """Validate a decoded document and build its domain object."""
    serializer = serializer_class(data=data, **kwargs)
    if not serializer.is_valid():
        raise SceneFormatError(f"{source}: {format_errors(serializer.errors)}")
    try:
        return serializer.save()
    except SceneFormatError:
        raise
    except PipelineError as e:
        raise SceneFormatError(f"{source}: {e}") from e


def read_document(path, serializer_class: Type[serializers.Serializer], **kwargs):
    instance = parse_document(load_json(path), serializer_class, source=str(path), **kwargs)
    logger.debug(f"Read {serializer_class.__name__} document from {path}")
    return instance


def dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2) + "\n"


def write_text(path, text: str):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')


def write_document(path, instance, serializer_class: Type[serializers.Serializer]):
    write_text(path, dump_json(serializer_class(instance).data))
