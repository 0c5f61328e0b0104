"""Knowledge-distillation model stealing lab."""

__version__ = "0.1.0"
