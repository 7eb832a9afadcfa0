"""Relief-pattern mesh synthesis, segmentation, retrieval and evaluation."""
from .errors import DataError, MeshFormatError, ReliefKitError, SolverError
from .mesh import (FaceAdjacencyGraph, FaceAttributes, PatternLabeling, TriangleMesh,
                   build_face_adjacency, compute_face_attributes, mean_edge_length)
from .meshio import export_labeled_mesh, load_mesh, save_mesh

__version__ = "0.1.0"

__all__ = [
    "DataError", "MeshFormatError", "ReliefKitError", "SolverError",
    "FaceAdjacencyGraph", "FaceAttributes", "PatternLabeling", "TriangleMesh",
    "build_face_adjacency", "compute_face_attributes", "mean_edge_length",
    "export_labeled_mesh", "load_mesh", "save_mesh",
]
