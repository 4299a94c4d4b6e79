"""String helpers."""

import re

_camel2under_re = re.compile("((?<=[a-z0-9])[A-Z]|(?!^)[A-Z](?=[a-z]))")


def camel2under(camel_string):
    """Converts a camelcased string to underscores."""
    return _camel2under_re.sub(r"_\1", camel_string).lower()


def under2camel(under_string):
    """Converts an underscored string to camelcased."""
    return "".join(w.capitalize() or "_" for w in under_string.split("_"))


def pluralize(word):
    """Naive English pluralization."""
    if word.endswith("s"):
        return word + "es"
    return word + "s"
