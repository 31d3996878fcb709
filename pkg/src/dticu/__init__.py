"""DT-ICU multimodal digital twin: model, training and attribution harness."""

__version__ = "0.1.0"
