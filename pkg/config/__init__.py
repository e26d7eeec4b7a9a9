from dataclasses import fields, replace

from services.exceptions import SchemaError, ValidationError


def apply_overrides(config, overrides: dict, pointer: str = '/config'):
    """
    Return a copy of a config dataclass with fields replaced by name.

    Lists are converted to tuples. Unknown names and values that fail the
    config's validation raise SchemaError pointing at the offending entry.
    """
    if not overrides:
        return config
    if not isinstance(overrides, dict):
        raise SchemaError(pointer, 'config overrides must be an object')

    known = {f.name for f in fields(config)}
    changes = {}
    for name, value in overrides.items():
        if name not in known:
            raise SchemaError(f"{pointer}/{name}", f"unknown {type(config).__name__} field '{name}'")
        changes[name] = tuple(value) if isinstance(value, list) else value

    try:
        return replace(config, **changes)
    except (ValidationError, TypeError) as e:
        raise SchemaError(pointer, str(e))
