"""Band-passed reset control: frequency analysis, shaping, simulation."""
