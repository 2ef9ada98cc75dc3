# segnet/serializers.py
from django.conf import settings
from rest_framework import serializers

from kan.layers import MIXERS
from numerics.exceptions import ConfigError
from ssm.scan import ScanDirection

from .config import ModelConfig, config_key


class CommaListField(serializers.ListField):
    """List field that also accepts ``"a,b,c"`` text from config files."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [part.strip() for part in data.split(",") if part.strip()]
        return super().to_internal_value(data)


class FlatConfigSerializer(serializers.Serializer):
    """
    Base for the flat ``key = value`` configs: dotted keys map to
    underscored fields and unknown keys are rejected by name.
    """

    def to_internal_value(self, data):
        known, unknown = {}, []
        for key, value in data.items():
            name = key.replace(".", "_")
            if name not in self.fields or config_key(name) != key:
                unknown.append(key)
                continue
            if isinstance(value, str):
                value = value.strip()
                if value == "" and self.fields[name].allow_null:
                    value = None
            known[name] = value
        if unknown:
            raise serializers.ValidationError({k: "Unknown configuration key." for k in sorted(unknown)})
        return super().to_internal_value(known)


class ModelConfigSerializer(FlatConfigSerializer):
    conv_channels = CommaListField(
        child=serializers.IntegerField(min_value=1), min_length=3, max_length=3, required=False
    )
    token_dims = CommaListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2, required=False
    )
    in_channels = serializers.IntegerField(min_value=1, required=False)
    out_channels = serializers.IntegerField(min_value=1, required=False)
    n_state = serializers.IntegerField(min_value=1, required=False)
    token_mixer = serializers.ChoiceField(choices=MIXERS, required=False)
    kan_grid = serializers.IntegerField(min_value=1, required=False)
    kan_order = serializers.IntegerField(min_value=1, required=False)
    kan_range = serializers.FloatField(required=False)
    kan_layers = serializers.IntegerField(min_value=1, required=False)
    mlp_hidden = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    norm_groups = serializers.IntegerField(min_value=1, required=False)
    sem_directions = CommaListField(
        child=serializers.ChoiceField(choices=[d.value for d in ScanDirection]),
        allow_empty=False,
        required=False,
    )
    sem_attention_groups = serializers.IntegerField(min_value=1, required=False)
    sem_enabled = serializers.BooleanField(required=False)

    def validate_kan_range(self, value):
        if value <= 0:
            raise serializers.ValidationError("kan_range must be positive")
        return value

    def validate(self, data):
        data.setdefault("sem_directions", list(settings.KM_DEFAULT_DIRECTIONS))
        groups = data.get("sem_attention_groups", 4)
        if data.get("sem_enabled", True):
            bad = [c for c in data.get("conv_channels", ModelConfig.conv_channels) if c % groups]
            if bad:
                raise serializers.ValidationError(
                    {"sem.attention_groups": f"conv widths {bad} are not divisible by {groups}"}
                )
        return data

    def create(self, validated_data):
        try:
            return ModelConfig(**validated_data)
        except ConfigError as exc:
            raise serializers.ValidationError({"non_field_errors": [str(exc)]})
