import csv
import io
import math
from typing import List

from rest_framework import serializers

from sclocalize.documents import ArrayField, read_document, write_document, write_text
from sclocalize.exceptions import DimensionMismatchError
from training.models import ACTIVATION, FitReport, WeightParams

CURVE_HEADER = ['iter', 'loss', 'L_c', 'L_r', 'trans_err_m', 'rot_err_deg']


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


class WeightParamsSerializer(serializers.Serializer):
    """`{activation: "tanh_relu", theta: [...]}`."""

    activation = serializers.ChoiceField(choices=[ACTIVATION], default=ACTIVATION)
    theta = ArrayField(shape=(None,))

    def to_representation(self, params: WeightParams):
        return {'activation': ACTIVATION, 'theta': params.theta.tolist()}

    def create(self, validated_data):
        return WeightParams(validated_data['theta'])


class FitReportSerializer(serializers.Serializer):
    """Write-only document; wall-clock time is left out so reruns are byte-identical."""

    def to_representation(self, report: FitReport):
        weights = report.weights
        return {
            'stage': report.stage,
            'mode': report.mode,
            'seed': report.seed,
            'iterations': report.iterations,
            'final_loss': _finite_or_none(report.loss[-1]),
            'best_loss': _finite_or_none(report.best_loss[-1]),
            'final_translation_error_m': _finite_or_none(report.translation_error[-1]),
            'final_rotation_error_deg': _finite_or_none(report.rotation_error[-1]),
            'weights': weights.tolist(),
            'theta': report.theta.theta.tolist(),
            'curve': {
                'loss': [_finite_or_none(v) for v in report.loss],
                'L_c': [_finite_or_none(v) for v in report.classification],
                'L_r': [_finite_or_none(v) for v in report.regression],
                'trans_err_m': [_finite_or_none(v) for v in report.translation_error],
                'rot_err_deg': [_finite_or_none(v) for v in report.rotation_error],
                'inlier_reproj_px': [_finite_or_none(v) for v in report.reprojection_error],
            },
        }


def curve_csv(report: FitReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CURVE_HEADER)
    for index, row in enumerate(zip(
        report.loss, report.classification, report.regression, report.translation_error, report.rotation_error
    )):
        writer.writerow([index] + [repr(float(v)) if math.isfinite(v) else '' for v in row])
    return buffer.getvalue()


def read_theta(path) -> WeightParams:
    return read_document(path, WeightParamsSerializer)


def write_theta(params: WeightParams, path):
    write_document(path, params, WeightParamsSerializer)


def write_report(report: FitReport, path):
    write_document(path, report, FitReportSerializer)


def write_curve(report: FitReport, path):
    write_text(path, curve_csv(report))


def read_thetas(paths, n_frames: int) -> List[WeightParams]:
    """One theta file shared by every frame, or one file per frame."""
    thetas = [read_theta(path) for path in paths]
    if len(thetas) == 1:
        return thetas * n_frames
    if len(thetas) != n_frames:
        raise DimensionMismatchError(f"{len(thetas)} weight files for {n_frames} frames")
    return thetas
