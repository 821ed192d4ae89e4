from rest_framework import serializers

from scenes.dataset import DataConfig
from scenes.synthetic import MAX_CLASSES, SyntheticConfig
from utils.config import SectionSerializer


class DataSerializer(SectionSerializer):
    """[data] section -> DataConfig"""
    target = DataConfig

    directory = serializers.CharField(allow_blank=True, default='')
    train_patches = serializers.IntegerField(min_value=1, default=2048)
    validation_patches = serializers.IntegerField(min_value=1, default=512)
    normalize = serializers.BooleanField(default=True)


class SyntheticSerializer(SectionSerializer):
    """
    [synth] section -> SyntheticConfig.

    The patch size is not a [synth] key: it comes from [arch] through the
    serializer context, so the tiles are always large enough for the network.
    """
    target = SyntheticConfig

    tile_size = serializers.IntegerField(min_value=4, default=256)
    num_classes = serializers.IntegerField(min_value=2, max_value=MAX_CLASSES, default=6)
    label_fraction = serializers.FloatField(min_value=0, max_value=1, default=0.05)
    sites = serializers.IntegerField(min_value=1, default=24)
    ms_noise = serializers.FloatField(min_value=0, default=0.03)
    pan_noise = serializers.FloatField(min_value=0, default=0.02)
    texture_strength = serializers.FloatField(min_value=0, default=0.15)
    signature_spread = serializers.FloatField(min_value=0, default=0.04)
    speckle = serializers.FloatField(min_value=0, max_value=1, default=0.0)

    def validate(self, attrs):
        attrs = {**attrs, 'patch_size': self.context.get('patch_size', 16)}
        return super().validate(attrs)
