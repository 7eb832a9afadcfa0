"""Per-face geometric descriptors, neighborhoods, flattening and rasterization."""
