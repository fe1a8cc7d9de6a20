"""Link-level simulation of the DSSS symbol-flipping attack and its defences."""

__version__ = "0.1.0"
