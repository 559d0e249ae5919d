"""Tests for the maskkit package."""
