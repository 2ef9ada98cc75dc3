# training/serializers.py
from django.conf import settings
from rest_framework import serializers

from numerics.exceptions import ConfigError
from segdata.samples import parse_size
from segnet.config import MODEL_KEYS
from segnet.serializers import FlatConfigSerializer, ModelConfigSerializer

from .optim import SCHEDULES
from .runconfig import TRAIN_KEYS, RunConfig, TrainConfig


class TrainConfigSerializer(FlatConfigSerializer):
    batch_size = serializers.IntegerField(min_value=1, required=False)
    lr_max = serializers.FloatField(min_value=0.0, required=False)
    lr_min = serializers.FloatField(min_value=0.0, required=False)
    lr_schedule = serializers.ChoiceField(choices=tuple(SCHEDULES), required=False)
    epochs = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    bce_weight = serializers.FloatField(min_value=0.0, required=False)
    dice_weight = serializers.FloatField(min_value=0.0, required=False)
    val_ratio = serializers.FloatField(min_value=0.0, required=False)
    augment = serializers.BooleanField(required=False)

    def validate_val_ratio(self, value):
        # 0 disables the split: validation then reuses the training samples.
        if value >= 1.0:
            raise serializers.ValidationError("val_ratio must be below 1")
        return value

    def validate(self, data):
        data.setdefault("seed", settings.KM_SEED)
        lr_max = data.get("lr_max", TrainConfig.lr_max)
        lr_min = data.get("lr_min", TrainConfig.lr_min)
        if lr_min > lr_max:
            raise serializers.ValidationError({"lr_min": f"lr_min ({lr_min}) exceeds lr_max ({lr_max})"})
        if data.get("bce_weight", 1.0) == 0 and data.get("dice_weight", 1.0) == 0:
            raise serializers.ValidationError("bce_weight and dice_weight cannot both be zero")
        return data

    def create(self, validated_data):
        try:
            return TrainConfig(**validated_data)
        except ConfigError as exc:
            raise serializers.ValidationError({"non_field_errors": [str(exc)]})


class RunConfigSerializer(FlatConfigSerializer):
    """
    Whole run: model keys and training keys are delegated to their own
    serializers, the remaining path keys are validated here.
    """
    data_dir = serializers.CharField(required=False)
    output_dir = serializers.CharField(required=False)
    image_size = serializers.CharField(required=False, allow_null=True)

    def validate_image_size(self, value):
        if value is None:
            return None
        try:
            return parse_size(value)
        except ConfigError as exc:
            raise serializers.ValidationError(str(exc))

    def to_internal_value(self, data):
        parts = {"model": {}, "train": {}, "paths": {}}
        for key, value in data.items():
            if key in MODEL_KEYS:
                parts["model"][key] = value
            elif key in TRAIN_KEYS:
                parts["train"][key] = value
            else:
                parts["paths"][key] = value

        errors = {}
        model = ModelConfigSerializer(data=parts["model"])
        train = TrainConfigSerializer(data=parts["train"])
        for sub in (model, train):
            if not sub.is_valid():
                errors.update(sub.errors)
        try:
            values = super().to_internal_value(parts["paths"])
        except serializers.ValidationError as exc:
            errors.update(exc.detail)
            values = {}
        if errors:
            raise serializers.ValidationError(errors)
        values["model"] = model.save()
        values["train"] = train.save()
        return values

    def create(self, validated_data):
        return RunConfig(**validated_data)
