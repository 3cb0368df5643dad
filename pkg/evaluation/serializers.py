import csv
import io

from rest_framework import serializers

from evaluation.models import EvalSummary


class EvalSummarySerializer(serializers.Serializer):
    def to_representation(self, summary: EvalSummary):
        return {
            'median_translation_error_m': summary.median_translation_error,
            'median_rotation_error_deg': summary.median_rotation_error,
            'recall': summary.recall,
            't_thresh_m': summary.t_thresh,
            'r_thresh_deg': summary.r_thresh,
            'pearson': summary.pearson,
            'frames': [
                {
                    'frame': frame.frame,
                    'translation_error_m': frame.error.translation_error,
                    'rotation_error_deg': frame.error.rotation_error,
                    'passed': frame.passed,
                    'n_points': frame.n_points,
                    'n_confident': frame.n_confident,
                }
                for frame in summary.frames
            ],
        }


def points_csv(rows) -> str:
    """rows: iterable of (frame, index, xyz, weight)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['frame', 'index', 'x', 'y', 'z', 'weight'])
    for frame, index, xyz, weight in rows:
        writer.writerow([frame, index] + [repr(float(v)) for v in xyz] + [repr(float(weight))])
    return buffer.getvalue()
