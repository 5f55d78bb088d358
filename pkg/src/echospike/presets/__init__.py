"""Bundled plain-text presets (key = value files, see data.load_preset)."""
