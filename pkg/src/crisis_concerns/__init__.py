"""Crisis activity-concern mining from geotagged social-media posts."""

__version__ = "0.1.0"
