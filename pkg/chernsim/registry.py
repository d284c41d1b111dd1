"""Named builder registries.

This module provides BuilderEntry (one registered builder) and Registry
(a name -> builder table with decorator registration), used to expose
environment builders to the CLI by selector name.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Generic, TypeVar

T = TypeVar("T")


@dataclass
class BuilderEntry(Generic[T]):
    """Represents a registered builder.

    Attributes:
        name: Selector name used on the command line and in config files.
        factory: Callable returning the built object.
        summary: One-line description shown by ``--help``.
        params: Keyword parameters the factory accepts, with defaults.
    """

    name: str
    factory: Callable[..., T]
    summary: str = ""
    params: dict[str, Any] = field(default_factory=dict)

    def build(self, **kwargs: Any) -> T:
        """Call the factory, rejecting parameters it does not declare."""
        unknown = sorted(set(kwargs) - set(self.params))
        if unknown:
            raise KeyError(f"{self.name}: unknown parameter(s) {', '.join(unknown)}")
        merged = {**self.params, **kwargs}
        return self.factory(**merged)


class Registry(Generic[T]):
    """Manages named builders.

    Example:
        envs = Registry[TestingEnv]("testing environment")

        @envs.register("example1", summary="two arms, three hypotheses")
        def _example1() -> TestingEnv: ...

        env = envs.get("example1").build()
    """

    def __init__(self, kind: str) -> None:
        """Initialize an empty registry for objects of the given kind."""
        self.kind = kind
        self._entries: dict[str, BuilderEntry[T]] = {}

    def register(
        self,
        name: str,
        *,
        summary: str = "",
        params: dict[str, Any] | None = None,
    ) -> Callable[[Callable[..., T]], Callable[..., T]]:
        """Decorator registering a builder under ``name``."""

        def decorator(factory: Callable[..., T]) -> Callable[..., T]:
            self.add(name, factory, summary=summary, params=params)
            return factory

        return decorator

    def add(
        self,
        name: str,
        factory: Callable[..., T],
        *,
        summary: str = "",
        params: dict[str, Any] | None = None,
    ) -> None:
        """Register ``factory`` under ``name`` (replacing an earlier entry)."""
        self._entries[name] = BuilderEntry(name, factory, summary, dict(params or {}))

    def get(self, name: str) -> BuilderEntry[T]:
        """Look up an entry, with the known names in the error message."""
        try:
            return self._entries[name]
        except KeyError:
            known = ", ".join(self.names())
            raise KeyError(f"unknown {self.kind} {name!r} (known: {known})") from None

    def names(self) -> list[str]:
        """Registered names in sorted order."""
        return sorted(self._entries)

    def describe(self) -> str:
        """One ``name  summary`` line per entry, for help text."""
        width = max((len(name) for name in self._entries), default=0)
        lines = [f"  {name:<{width}}  {self._entries[name].summary}".rstrip() for name in self.names()]
        return f"{self.kind}s:\n" + "\n".join(lines)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)
