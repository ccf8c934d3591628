"""Cross-modal (visible/infrared) person re-identification with part
prototypes and gradual bidirectional prototype mixing."""

__version__ = "0.1.0"
