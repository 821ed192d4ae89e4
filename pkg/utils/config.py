"""
Run configuration files.

UTF-8 ``key = value`` lines, ``#`` comments and ``[section]`` headers.
Keys that appear before the first header belong to ``[run]``. Each section
is validated by a DRF serializer owned by the app that consumes it.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import environ
from rest_framework import serializers

from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ('run', 'arch', 'train', 'data', 'reuse', 'synth')


@dataclass(frozen=True)
class RunConfig:
    name: str = 'run'
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must be an unsigned 64-bit integer, got {self.seed}')
        if self.threads < 1:
            raise ConfigError(f'threads must be >= 1, got {self.threads}')


class ConfigFile:
    def __init__(self, sections=None, lines=None, path=None):
        self.sections = {name: {} for name in SECTIONS}
        for name, values in (sections or {}).items():
            self.sections[name].update(values)
        self.lines = dict(lines or {})
        self.path = path

    @classmethod
    def parse(cls, text, path=None):
        sections = {name: {} for name in SECTIONS}
        lines = {}
        current = 'run'
        for number, raw in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if line.startswith('['):
                if not line.endswith(']'):
                    raise ConfigError(f'malformed section header {line!r}', number, path)
                current = line[1:-1].strip().lower()
                if current not in SECTIONS:
                    raise ConfigError(f'unknown section [{current}]', number, path)
                continue
            if '=' not in line:
                raise ConfigError(f'expected "key = value", got {line!r}', number, path)
            key, value = (part.strip() for part in line.split('=', 1))
            key = key.lower()
            if not key:
                raise ConfigError('missing key before "="', number, path)
            if key in sections[current]:
                raise ConfigError(f'duplicate key {key!r} in [{current}]', number, path)
            sections[current][key] = value
            lines[(current, key)] = number
        return cls(sections, lines, path)

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f'config file not found: {path}')
        return cls.parse(path.read_text(encoding='utf-8'), path=str(path))

    def section(self, name):
        return dict(self.sections[name])

    def line_of(self, section, key):
        return self.lines.get((section, key))

    def has_section(self, name):
        return bool(self.sections.get(name))

    def set(self, section, key, value):
        self.sections[section][key] = value


def _strip_comment(line):
    stripped = line.lstrip()
    if stripped.startswith('#'):
        return ''
    marker = line.find(' #')
    return line if marker < 0 else line[:marker]


def parse_list(value, cast=str):
    """Comma separated list through django-environ's value parser."""
    if isinstance(value, (list, tuple)):
        return [cast(item) for item in value]
    if value is None or str(value).strip() == '':
        return []
    return [cast(item.strip()) for item in environ.Env.parse_value(value, list) if item.strip()]


def validate_section(config, section, serializer_class, list_fields=(), context=None):
    """
    Validate one config section and return the typed object built by the
    serializer's ``create()``.

    Raises:
        ConfigError: naming the first offending key and its line number.
    """
    data = config.section(section)
    known = set(serializer_class().fields)
    for key in data:
        if key not in known:
            raise ConfigError(
                f'unknown key {key!r} in [{section}]', config.line_of(section, key), config.path
            )
    for key in list_fields:
        if key in data:
            data[key] = parse_list(data[key])

    serializer = serializer_class(data=data, context=context or {})
    if not serializer.is_valid():
        key, messages = next(iter(serializer.errors.items()))
        detail = '; '.join(_flatten_errors(messages))
        line = config.line_of(section, key) if key != 'non_field_errors' else None
        label = f'[{section}] {key}' if key != 'non_field_errors' else f'[{section}]'
        raise ConfigError(f'{label}: {detail}', line, config.path)
    return serializer.save()


def _flatten_errors(messages):
    if isinstance(messages, dict):
        for index, nested in messages.items():
            for message in _flatten_errors(nested):
                yield f'item {index}: {message}'
    elif isinstance(messages, (list, tuple)):
        for nested in messages:
            yield from _flatten_errors(nested)
    else:
        yield str(messages)


def render_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ', '.join(render_value(item) for item in value)
    if value is None:
        return ''
    return str(value)


def render_config(sections):
    """Render ``{section: {key: value}}`` in the config file format."""
    out = ['# effective configuration (defaults merged)']
    for name in SECTIONS:
        values = sections.get(name)
        if not values:
            continue
        out.append('')
        out.append(f'[{name}]')
        for key, value in values.items():
            out.append(f'{key} = {render_value(value)}')
    return '\n'.join(out) + '\n'


class SectionSerializer(serializers.Serializer):
    """
    Base for config section serializers. ``target`` is the typed config
    class; its own consistency checks surface as validation errors and
    ``save()`` returns the built object.
    """
    target = None

    def validate(self, attrs):
        try:
            self._built = self.target(**attrs)
        except ConfigError as e:
            raise serializers.ValidationError(str(e)) from e
        return attrs

    def create(self, validated_data):
        return self._built
