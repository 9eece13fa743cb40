"""Unit test package for techcast."""
