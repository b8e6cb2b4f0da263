"""
Feature schema, tower input assembly and inverted-index interaction
features (I2IF).
"""

from .schema import FeatureSpec, FeatureSchema, default_schema, schema_from_config, schema_from_dict
from .i2if import I2IFIndex, build_i2if_index, i2if_lookup, i2if_intersection, rebuild_after_churn
from .assemble import (
    SideInput,
    TowerBatch,
    ExampleInputs,
    BatchInputs,
    assemble_inputs,
    assemble_batch,
    catalog_item_batch,
    catalog_user_input,
    pair_interaction_batch,
    repeat_side,
)

__all__ = [
    'FeatureSpec',
    'FeatureSchema',
    'default_schema',
    'schema_from_config',
    'schema_from_dict',
    'I2IFIndex',
    'build_i2if_index',
    'i2if_lookup',
    'i2if_intersection',
    'rebuild_after_churn',
    'SideInput',
    'TowerBatch',
    'ExampleInputs',
    'BatchInputs',
    'assemble_inputs',
    'assemble_batch',
    'catalog_item_batch',
    'catalog_user_input',
    'pair_interaction_batch',
    'repeat_side',
]
