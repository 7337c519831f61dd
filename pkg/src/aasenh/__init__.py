"""Unpaired speech enhancement trained by acoustic (CTC) and adversarial (BEGAN) supervision."""

__version__ = "0.1.0"
