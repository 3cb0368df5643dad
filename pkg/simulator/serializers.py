from pathlib import Path
from typing import List

import numpy as np
from rest_framework import serializers

from sclocalize.documents import ArrayField, read_document, write_document
from simulator.models import (
    CAMERA_TO_WORLD,
    WORLD_TO_CAMERA,
    CameraIntrinsics,
    Pose,
    SyntheticImagePair,
    SyntheticScene,
)

MIN_SCENE_POINTS = 7


class IntrinsicsSerializer(serializers.Serializer):
    fx = serializers.FloatField()
    fy = serializers.FloatField()
    cx = serializers.FloatField()
    cy = serializers.FloatField()
    width = serializers.IntegerField(min_value=1)
    height = serializers.IntegerField(min_value=1)

    def to_representation(self, intr: CameraIntrinsics):
        return intr.to_dict()

    def create(self, validated_data):
        return CameraIntrinsics(**validated_data)


class PoseSerializer(serializers.Serializer):
    """`{R: [9] row-major, t: [3], convention}`; convention defaults to world-to-camera."""

    R = ArrayField(shape=(9,))
    t = ArrayField(shape=(3,))
    convention = serializers.ChoiceField(choices=[WORLD_TO_CAMERA, CAMERA_TO_WORLD], default=WORLD_TO_CAMERA)

    def to_representation(self, pose: Pose):
        return {
            'R': pose.rotation.reshape(9).tolist(),
            't': pose.translation.tolist(),
            'convention': pose.convention,
        }

    def create(self, validated_data):
        return Pose(validated_data['R'].reshape(3, 3), validated_data['t'], validated_data['convention'])


class PointSerializer(serializers.Serializer):
    gt = ArrayField(shape=(3,))
    pred = ArrayField(shape=(3,))
    px = ArrayField(shape=(2,))
    outlier = serializers.BooleanField()


class SceneSerializer(serializers.Serializer):
    intrinsics = IntrinsicsSerializer()
    gt_pose = PoseSerializer()
    points = PointSerializer(many=True)
    seed = serializers.IntegerField()

    def validate_points(self, points):
        if len(points) < MIN_SCENE_POINTS:
            raise serializers.ValidationError(
                f"Scene has {len(points)} points; at least {MIN_SCENE_POINTS} are required (N > 6)."
            )
        return points

    def to_representation(self, scene: SyntheticScene):
        return {
            'intrinsics': scene.intrinsics.to_dict(),
            'gt_pose': PoseSerializer(scene.gt_pose).data,
            'points': [
                {
                    'gt': gt.tolist(),
                    'pred': pred.tolist(),
                    'px': px.tolist(),
                    'outlier': bool(outlier),
                }
                for gt, pred, px, outlier in zip(
                    scene.gt_points, scene.predicted_coords, scene.pixel_obs, scene.outlier_mask
                )
            ],
            'seed': scene.seed,
        }

    def create(self, validated_data):
        points = validated_data['points']
        return SyntheticScene(
            gt_points=np.array([p['gt'] for p in points]),
            gt_pose=PoseSerializer().create(validated_data['gt_pose']).to_w2c(),
            intrinsics=IntrinsicsSerializer().create(validated_data['intrinsics']),
            predicted_coords=np.array([p['pred'] for p in points]),
            pixel_obs=np.array([p['px'] for p in points]),
            outlier_mask=np.array([p['outlier'] for p in points], dtype=bool),
            seed=validated_data['seed'],
        )


class ImagePairSerializer(serializers.Serializer):
    intrinsics = IntrinsicsSerializer()
    source_pose = PoseSerializer()
    target_pose = PoseSerializer()
    source_image = ArrayField(shape=(None, None))
    target_image = ArrayField(shape=(None, None))
    source_coords = ArrayField(shape=(None, None, 3))
    target_scene = SceneSerializer(required=False, allow_null=True)

    def validate(self, attrs):
        intr = attrs['intrinsics']
        expected = (intr['height'], intr['width'])
        for name in ('source_image', 'target_image'):
            image = attrs[name]
            if image.shape != expected:
                raise serializers.ValidationError({name: f"Expected {expected[0]}x{expected[1]} image, got {image.shape}."})
            if image.min() < 0.0 or image.max() > 1.0:
                raise serializers.ValidationError({name: 'Intensities must lie in [0, 1].'})
        if attrs['source_coords'].shape[:2] != expected:
            raise serializers.ValidationError({'source_coords': 'Per-pixel coordinates must match the image size.'})
        return attrs

    def to_representation(self, pair: SyntheticImagePair):
        return {
            'intrinsics': pair.intrinsics.to_dict(),
            'source_pose': PoseSerializer(pair.source_pose).data,
            'target_pose': PoseSerializer(pair.target_pose).data,
            'source_image': pair.source_image.tolist(),
            'target_image': pair.target_image.tolist(),
            'source_coords': pair.source_coords.tolist(),
            'target_scene': SceneSerializer(pair.target_scene).data if pair.target_scene is not None else None,
        }

    def create(self, validated_data):
        scene_data = validated_data.get('target_scene')
        return SyntheticImagePair(
            source_image=validated_data['source_image'],
            target_image=validated_data['target_image'],
            source_pose=PoseSerializer().create(validated_data['source_pose']).to_w2c(),
            target_pose=PoseSerializer().create(validated_data['target_pose']).to_w2c(),
            source_coords=validated_data['source_coords'],
            intrinsics=IntrinsicsSerializer().create(validated_data['intrinsics']),
            target_scene=SceneSerializer().create(scene_data) if scene_data else None,
        )


def read_scene(path) -> SyntheticScene:
    return read_document(path, SceneSerializer)


def write_scene(scene: SyntheticScene, path):
    write_document(path, scene, SceneSerializer)


def read_pair(path) -> SyntheticImagePair:
    return read_document(path, ImagePairSerializer)


def write_pair(pair: SyntheticImagePair, path):
    write_document(path, pair, ImagePairSerializer)


def scene_paths(paths) -> List[Path]:
    """Expand directories into their sorted *.json files, keeping argument order."""
    expanded = []
    for path in map(Path, paths):
        if path.is_dir():
            expanded.extend(sorted(path.glob('*.json')))
        else:
            expanded.append(path)
    return expanded


def read_scenes(paths) -> List[SyntheticScene]:
    return [read_scene(path) for path in scene_paths(paths)]
