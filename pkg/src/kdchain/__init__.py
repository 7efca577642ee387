"""Knowledge-graph grounded question answering with verified reasoning chains."""

__version__ = "0.1.0"
