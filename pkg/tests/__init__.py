"""Tests for deepdgl."""
