"""Air-column height estimation from pouring audio and wrist force/torque."""
__version__ = "0.1.0"
