from typing import List

from rest_framework import serializers

from sclocalize.documents import load_json, parse_document, write_document
from simulator.models import Pose
from simulator.serializers import PoseSerializer


class PoseListSerializer(serializers.Serializer):
    """`{poses: [pose, ...]}` in frame order; written by `solve` for several scenes."""

    poses = PoseSerializer(many=True, allow_empty=False)

    def to_representation(self, poses: List[Pose]):
        return {'poses': [PoseSerializer(pose).data for pose in poses]}

    def create(self, validated_data):
        return [PoseSerializer().create(item) for item in validated_data['poses']]


def read_pose(path) -> Pose:
    return parse_document(load_json(path), PoseSerializer, source=str(path))


def write_pose(pose: Pose, path):
    write_document(path, pose, PoseSerializer)


def read_poses(path) -> List[Pose]:
    """A single pose document or a `{poses: [...]}` list."""
    data = load_json(path)
    if isinstance(data, dict) and 'poses' in data:
        return parse_document(data, PoseListSerializer, source=str(path))
    return [parse_document(data, PoseSerializer, source=str(path))]


def write_poses(poses: List[Pose], path):
    write_document(path, poses, PoseListSerializer)
