"""Patch-based synthesis of voxel radiance scenes from a single exemplar."""
