"""soundalike: query-by-example music similarity engine."""

__version__ = "0.1.0"
