"""Promptable segmentation over HTTP: a SAM wrapper with an offline stub."""

from sam_service.config import ServiceConfig

__all__ = ["ServiceConfig"]
