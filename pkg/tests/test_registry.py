"""Tests for chernsim.registry module."""

import pytest

from chernsim.registry import BuilderEntry, Registry


class TestBuilderEntry:
    """Tests for BuilderEntry."""

    def test_defaults_merge(self):
        """Declared defaults fill in missing keywords."""
        entry = BuilderEntry("pair", lambda a, b: (a, b), params={"a": 1, "b": 2})
        assert entry.build(b=5) == (1, 5)

    def test_unknown_param(self):
        """Keywords the builder does not declare are rejected."""
        entry = BuilderEntry("pair", lambda a=1: a, params={"a": 1})
        with pytest.raises(KeyError, match="unknown parameter"):
            entry.build(c=3)


class TestRegistry:
    """Tests for Registry."""

    def test_register_decorator(self):
        """The decorator registers and returns the factory unchanged."""
        registry: Registry[int] = Registry("number")

        @registry.register("one", summary="the number one")
        def one() -> int:
            return 1

        assert one() == 1
        assert "one" in registry
        assert registry.get("one").summary == "the number one"
        assert registry.get("one").build() == 1

    def test_add_replaces(self):
        """Adding an existing name replaces the entry."""
        registry: Registry[int] = Registry("number")
        registry.add("x", lambda: 1)
        registry.add("x", lambda: 2)
        assert len(registry) == 1
        assert registry.get("x").build() == 2

    def test_unknown_name_lists_known(self):
        """Lookup errors list the registered names."""
        registry: Registry[int] = Registry("number")
        registry.add("b", lambda: 2)
        registry.add("a", lambda: 1)
        with pytest.raises(KeyError, match="known: a, b"):
            registry.get("c")

    def test_names_sorted(self):
        """names() is sorted."""
        registry: Registry[int] = Registry("number")
        for name in ("z", "m", "a"):
            registry.add(name, lambda: 0)
        assert registry.names() == ["a", "m", "z"]

    def test_describe(self):
        """describe lists every name with its summary, aligned."""
        registry: Registry[int] = Registry("number")
        registry.add("one", lambda: 1, summary="the number one")
        registry.add("three", lambda: 3)
        assert registry.describe() == "numbers:\n  one    the number one\n  three"

    def test_describe_empty(self):
        """An empty registry still has a heading."""
        assert Registry[int]("number").describe() == "numbers:\n"
