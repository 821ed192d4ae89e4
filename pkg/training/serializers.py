from rest_framework import serializers

from training.optimizer import TrainConfig
from utils.config import RunConfig, SectionSerializer


class RunSerializer(SectionSerializer):
    """[run] section (and keys before the first header) -> RunConfig"""
    target = RunConfig

    name = serializers.CharField(max_length=255, default='run')
    seed = serializers.IntegerField(min_value=0, default=0)
    threads = serializers.IntegerField(min_value=1, default=1)


class TrainSerializer(SectionSerializer):
    """
    [train] section -> TrainConfig.

    ``seed`` and ``threads`` are taken from the context (the [run] section and
    command line). ReuseNets train without early stopping unless the section
    asks for it.
    """
    target = TrainConfig

    learning_rate = serializers.FloatField(default=0.01)
    momentum = serializers.FloatField(min_value=0, default=0.9)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    max_epochs = serializers.IntegerField(min_value=1, default=240)
    weight_decay = serializers.FloatField(min_value=0, default=0.001)
    lr_step_epochs = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[60, 180])
    lr_factor = serializers.FloatField(default=0.1)
    early_stopping = serializers.BooleanField(allow_null=True, default=None)
    patience = serializers.IntegerField(min_value=0, default=0)
    full_tile_validation = serializers.BooleanField(default=False)

    def validate_learning_rate(self, value):
        if value <= 0:
            raise serializers.ValidationError('must be > 0')
        return value

    def validate(self, attrs):
        attrs = dict(attrs)
        if attrs.get('early_stopping') is None:
            attrs['early_stopping'] = not self.context.get('recurrent', False)
        attrs['seed'] = self.context.get('seed', 0)
        attrs['threads'] = self.context.get('threads', 1)
        return super().validate(attrs)
