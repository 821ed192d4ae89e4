from rest_framework import serializers

from networks.architectures import (
    EXTRA_CONV_LAYERS, INIT_MODES, UPSAMPLERS, VARIANTS, ArchSpec, ReuseNetConfig,
)
from utils.config import SectionSerializer


class ArchSerializer(SectionSerializer):
    """[arch] section -> ArchSpec"""
    target = ArchSpec

    variant = serializers.ChoiceField(choices=VARIANTS, default='fusenet_low')
    patch_size = serializers.IntegerField(min_value=1, default=16)
    num_classes = serializers.IntegerField(min_value=2, max_value=254, default=6)
    bottleneck_hw = serializers.IntegerField(min_value=1, default=4)
    extra_conv_layers = serializers.ChoiceField(choices=EXTRA_CONV_LAYERS, default=0)
    upsampler = serializers.ChoiceField(choices=UPSAMPLERS, default='transposed')


class ReuseSerializer(SectionSerializer):
    """[reuse] section -> ReuseNetConfig"""
    target = ReuseNetConfig

    instances = serializers.IntegerField(min_value=1, default=1)
    init_mode = serializers.ChoiceField(choices=INIT_MODES, default='plain')
    pretrained_checkpoint = serializers.CharField(allow_blank=True, default='')
