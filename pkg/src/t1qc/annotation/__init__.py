"""Annotation persistence and HTTP service."""

from .store import AnnotationStore, NotReady, ProgressSummary, StoredAnnotation, UnknownImage, UnknownRater

__all__ = [
    "AnnotationStore",
    "NotReady",
    "ProgressSummary",
    "StoredAnnotation",
    "UnknownImage",
    "UnknownRater",
    "create_app",
]


def create_app(*args, **kwargs):
    # deferred import: fastapi is only needed when the service is actually used
    from .service import create_app as _create_app

    return _create_app(*args, **kwargs)
