"""Feature toggles for the neck modules.

Six independent switches, named by short tokens:

  pp  position pooling branch (average) of the shallow extractor
  sp  saliency pooling branch (max) of the shallow extractor
  si  spatial interaction master switch for the lateral module
  li  local interaction (dense depthwise), requires si
  ni  non-local interaction (dilated depthwise), requires si
  ci  channel interaction gate

With every switch off the network degrades to a plain pyramid with 1x1
lateral convolutions, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

TOKENS = ("ci", "li", "ni", "pp", "si", "sp")


@dataclass(frozen=True)
class Flags:
    pp: bool = False
    sp: bool = False
    si: bool = False
    li: bool = False
    ni: bool = False
    ci: bool = False

    def normalized(self) -> "Flags":
        """li and ni only act under the si master switch."""
        if not self.si:
            return replace(self, li=False, ni=False)
        return self

    def active(self) -> tuple[str, ...]:
        return tuple(sorted(f.name for f in fields(self) if getattr(self, f.name)))


FULL = Flags(pp=True, sp=True, si=True, li=True, ni=True, ci=True)
BASELINE = Flags()


def parse_flags(text: str) -> Flags:
    """Parse a comma-separated token list like "sp,pp,ci" (normalised)."""
    on = {}
    for raw in text.split(","):
        tok = raw.strip()
        if not tok:
            continue
        if tok not in TOKENS:
            raise ConfigError(f"unknown flag token {tok!r}; valid tokens: {', '.join(TOKENS)}")
        on[tok] = True
    return Flags(**on).normalized()


def flags_token(flags: Flags) -> str:
    """Canonical sorted form, "+"-joined; "-" when everything is off."""
    active = flags.active()
    return "+".join(active) if active else "-"
