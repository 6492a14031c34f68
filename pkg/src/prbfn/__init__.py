"""Design tools for pixel-based reconfigurable beamforming networks that emulate fluid antennas."""
__version__ = "0.1.0"
