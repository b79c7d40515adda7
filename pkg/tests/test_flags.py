"""Flag token parsing, normalisation, and canonical formatting."""

import pytest

from lrfpn.errors import ConfigError
from lrfpn.flags import BASELINE, FULL, Flags, flags_token, parse_flags


class TestParse:
    def test_empty_string_is_baseline(self):
        assert parse_flags("") == BASELINE
        assert parse_flags("  ") == BASELINE

    def test_all_tokens(self):
        assert parse_flags("sp,pp,si,li,ni,ci") == FULL

    def test_whitespace_and_duplicates_tolerated(self):
        assert parse_flags(" sp , pp ,sp") == Flags(pp=True, sp=True)

    def test_unknown_token_rejected(self):
        with pytest.raises(ConfigError, match="valid tokens"):
            parse_flags("sp,bogus")

    def test_li_without_si_is_dropped(self):
        assert parse_flags("li,ni") == BASELINE
        assert parse_flags("si,li") == Flags(si=True, li=True)


class TestToken:
    def test_sorted_plus_joined(self):
        assert flags_token(Flags(sp=True, pp=True)) == "pp+sp"
        assert flags_token(FULL) == "ci+li+ni+pp+si+sp"

    def test_baseline_token(self):
        assert flags_token(BASELINE) == "-"

    def test_roundtrip_through_comma_form(self):
        f = Flags(pp=True, si=True, ni=True)
        assert parse_flags(",".join(f.active())) == f
