"""Tests for chernsim package."""
