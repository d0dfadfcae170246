"""Entanglement engineering for weakly excited atoms in a single-mode cavity."""
