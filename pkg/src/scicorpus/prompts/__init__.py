"""Versioned prompt templates. Each file carries the full instruction text
with named substitution slots; substitution is literal string replacement,
never str.format, so template braces stay inert.
"""

from importlib import resources


def load_prompt(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def fill(template: str, **slots: str) -> str:
    out = template
    for key, value in slots.items():
        out = out.replace("{" + key + "}", value)
    return out
